use std::fs::{self, File};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use qaharvest::llm::PromptTemplate;
use qaharvest::seedgen::{
    apply_denylist, build_seed_set, expand_templates, generate_llm_seeds_for_topics, load_manual_seeds, load_templates,
    write_review_csv, write_seed_csv, Denylist,
};
use qaharvest::SeedQuery;

use crate::error::CliError;
use crate::{llm_backend, SeedsCommand};

pub fn read_denylist(path: Option<&Path>) -> Result<Denylist, CliError> {
    match path {
        None => Ok(Denylist::default()),
        Some(p) => {
            let file = File::open(p).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?;
            Ok(Denylist::parse(BufReader::new(file))?)
        }
    }
}

pub fn read_seed_file(path: &Path, location: &str, language: &str) -> Result<Vec<SeedQuery>, CliError> {
    let file = File::open(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    Ok(load_manual_seeds(file, location, language)?)
}

pub fn read_template_file(path: &Path, location: &str, language: &str) -> Result<Vec<SeedQuery>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    Ok(expand_templates(&load_templates(&text)?, location, language)?)
}

fn output(path: Option<&PathBuf>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            Box::new(File::create(p)?)
        }
        None => Box::new(io::stdout().lock()),
    })
}

fn finish(
    raw: Vec<SeedQuery>,
    location: &str,
    language: &str,
    denylist: Option<&Path>,
    out: Option<&PathBuf>,
) -> Result<Vec<SeedQuery>, CliError> {
    let filtered = apply_denylist(raw, &read_denylist(denylist)?);
    let set = build_seed_set(filtered, location, language)?;
    write_seed_csv(&set.queries, output(out)?)?;
    Ok(set.queries)
}

pub fn run(cmd: SeedsCommand) -> Result<(), CliError> {
    match cmd {
        SeedsCommand::Expand {
            templates,
            location,
            language,
            denylist,
            out,
        } => {
            let raw = read_template_file(&templates, &location, &language)?;
            finish(raw, &location, &language, denylist.as_deref(), out.as_ref())?;
        }
        SeedsCommand::Generate {
            backend,
            topics,
            count,
            location,
            language,
            env,
            parallelism,
            denylist,
            prompt,
            out,
            review,
        } => {
            let backend = llm_backend(backend, env.as_deref())?;
            let template = match prompt {
                Some(p) => PromptTemplate::from_file("seed_generation", &p)?,
                None => PromptTemplate::builtin("seed_generation").expect("built-in seed prompt"),
            };
            let raw = generate_llm_seeds_for_topics(
                backend.as_ref(),
                &template,
                &location,
                &language,
                &topics,
                count,
                parallelism,
            )?;
            let kept = finish(raw, &location, &language, denylist.as_deref(), out.as_ref())?;
            if let Some(review) = review {
                write_review_csv(&kept, File::create(review)?)?;
            }
        }
        SeedsCommand::Merge {
            files,
            location,
            language,
            denylist,
            out,
        } => {
            let mut raw = Vec::new();
            for f in &files {
                raw.extend(read_seed_file(f, &location, &language)?);
            }
            finish(raw, &location, &language, denylist.as_deref(), out.as_ref())?;
        }
    }
    Ok(())
}

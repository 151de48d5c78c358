use std::collections::HashMap;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use qaharvest::analytics::{
    likert_report, preference_report, read_ratings, render_likert_table, render_preference_report, write_likert_csv,
    AgreementReport, DistributionReport, RatingRecord,
};
use qaharvest::curate::{export_preference_tasks, llm_alternatives, write_preference_tasks, write_unblinding_key};
use qaharvest::dataset::{import_jsonl_file, read_splits};

use crate::error::CliError;
use crate::{AgreeArgs, AgreeKind, PreferenceArgs, StatsArgs};

pub fn stats(args: StatsArgs) -> Result<(), CliError> {
    if !args.out_dir.join("manifest.json").exists() {
        return Err(CliError::config(format!("{} has no manifest.json", args.out_dir.display())));
    }
    let (_, records) = read_splits(&args.out_dir)?;
    let report = DistributionReport::from_records(records.iter().map(|(s, r)| (*s, r)));
    print!("{}", report.render_table());
    if let Some(path) = args.csv {
        report.write_csv(File::create(path)?)?;
    }
    Ok(())
}

fn load_ratings(path: &Path) -> Result<Vec<RatingRecord>, CliError> {
    let file = File::open(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let ratings = read_ratings(BufReader::new(file)).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    if ratings.is_empty() {
        return Err(CliError::config(format!("{}: no ratings", path.display())));
    }
    Ok(ratings)
}

fn label(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

pub fn agree(args: AgreeArgs) -> Result<(), CliError> {
    let mut rows: Vec<(String, AgreementReport)> = Vec::new();
    for path in &args.files {
        let ratings = load_ratings(path)?;
        let report = match args.kind {
            AgreeKind::Likert => likert_report(&ratings, args.scale),
            AgreeKind::Preference => preference_report(&ratings),
        }
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        rows.push((label(path), report));
    }
    if args.json {
        let map: Vec<serde_json::Value> = rows
            .iter()
            .map(|(l, r)| serde_json::json!({"label": l, "report": r}))
            .collect();
        println!("{}", serde_json::to_string_pretty(&map)?);
    } else {
        match args.kind {
            AgreeKind::Likert => print!("{}", render_likert_table(&rows)),
            AgreeKind::Preference => {
                for (l, r) in &rows {
                    print!("{}", render_preference_report(l, r));
                }
            }
        }
    }
    if let Some(path) = args.csv {
        match args.kind {
            AgreeKind::Likert => write_likert_csv(&rows, File::create(path)?)?,
            AgreeKind::Preference => {
                let mut w = csv::Writer::from_writer(File::create(path)?);
                w.write_record(["label", "items", "observed_agreement", "cohen_kappa", "gwet_ac1"])?;
                for (l, r) in &rows {
                    let v = |x: Option<f64>| x.map_or(String::new(), |x| x.to_string());
                    w.write_record([
                        l.clone(),
                        r.n_items.to_string(),
                        v(r.observed_agreement),
                        v(r.cohen_kappa.map(|k| k.value)),
                        v(r.gwet_ac1.map(|k| k.value)),
                    ])?;
                }
                w.flush()?;
            }
        }
    }
    Ok(())
}

pub fn preference(args: PreferenceArgs) -> Result<(), CliError> {
    let imported = import_jsonl_file(&args.input)?;
    for r in &imported.rejected {
        eprintln!("{}: line {} rejected: {}", args.input.display(), r.line, r.message);
    }
    let alternatives: HashMap<String, String> = llm_alternatives(&imported.records);
    let (tasks, keys) = export_preference_tasks(&imported.records, &alternatives, args.seed);
    write_preference_tasks(&tasks, File::create(&args.out)?)?;
    write_unblinding_key(&keys, File::create(&args.key)?)?;
    eprintln!("{} preference tasks written to {}", tasks.len(), args.out.display());
    Ok(())
}

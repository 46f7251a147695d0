use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use fanchirp_core::metrics::mvc_combine;
use fanchirp_core::{read_wav, score_utterance, MetricReport, UtteranceScores};
use rayon::prelude::*;

use crate::error::{usage, CliResult};

/// Objective quality measures against a clean reference, or the
/// minimum-variance combination of two score lists.
#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Reference WAV file or directory.
    #[arg(long = "ref", required_unless_present = "mvc", requires = "test")]
    pub reference: Option<PathBuf>,
    /// Enhanced WAV file or directory, matched to the references by name.
    #[arg(long, requires = "reference")]
    pub test: Option<PathBuf>,
    /// Combine two score CSV files into one with minimum variance.
    #[arg(long, num_args = 2, value_names = ["A", "B"], conflicts_with_all = ["reference", "test"])]
    pub mvc: Option<Vec<PathBuf>>,
    /// CSV output path.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    #[arg(short, long, default_value_t = 1)]
    pub jobs: usize,
}

fn wav_files(dir: &Path) -> CliResult<BTreeMap<String, PathBuf>> {
    let mut files = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| usage(format!("cannot list {}: {e}", dir.display())))?;
    for entry in entries {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            files.insert(name, path);
        }
    }
    Ok(files)
}

/// Pairs reference and test files. Directories must hold the same names.
fn pairs(reference: &Path, test: &Path) -> CliResult<Vec<(String, PathBuf, PathBuf)>> {
    match (reference.is_dir(), test.is_dir()) {
        (false, false) => {
            let name = reference.file_name().map_or("reference".into(), |n| n.to_string_lossy().into_owned());
            Ok(vec![(name, reference.to_path_buf(), test.to_path_buf())])
        }
        (true, true) => {
            let refs = wav_files(reference)?;
            let tests = wav_files(test)?;
            let only_ref: Vec<&str> = refs.keys().filter(|k| !tests.contains_key(*k)).map(String::as_str).collect();
            let only_test: Vec<&str> = tests.keys().filter(|k| !refs.contains_key(*k)).map(String::as_str).collect();
            if !only_ref.is_empty() || !only_test.is_empty() {
                return Err(usage(format!(
                    "reference and test lists differ; only in reference: [{}]; only in test: [{}]",
                    only_ref.join(", "),
                    only_test.join(", ")
                )));
            }
            if refs.is_empty() {
                return Err(usage(format!("no WAV files in {}", reference.display())));
            }
            Ok(refs.into_iter().map(|(name, r)| (name.clone(), r, tests[&name].clone())).collect())
        }
        _ => Err(usage("--ref and --test must both be files or both be directories")),
    }
}

fn score_pair(reference: &Path, test: &Path) -> anyhow::Result<UtteranceScores> {
    let r = read_wav(reference).with_context(|| format!("reading {}", reference.display()))?;
    let t = read_wav(test).with_context(|| format!("reading {}", test.display()))?;
    anyhow::ensure!(
        r.sample_rate() == t.sample_rate(),
        "{} is at {} Hz but {} is at {} Hz",
        reference.display(),
        r.sample_rate(),
        test.display(),
        t.sample_rate()
    );
    let n = r.n_samples().min(t.n_samples());
    Ok(score_utterance(&r.channel(0)[..n], &t.channel(0)[..n], r.sample_rate())?)
}

fn score(args: &ScoreArgs, reference: &Path, test: &Path) -> CliResult<()> {
    let pairs = pairs(reference, test)?;
    let pool =
        rayon::ThreadPoolBuilder::new().num_threads(args.jobs.max(1)).build().context("starting worker threads")?;
    let results: Vec<anyhow::Result<UtteranceScores>> =
        pool.install(|| pairs.par_iter().map(|(_, r, t)| score_pair(r, t)).collect());
    let mut text = String::from("name,cd,llr,fwsegsnr\n");
    let mut scores = Vec::with_capacity(results.len());
    for ((name, _, _), res) in pairs.iter().zip(results) {
        let s = res?;
        writeln!(text, "{name},{},{},{}", s.cd, s.llr, s.fwsegsnr).unwrap();
        scores.push(s);
    }
    let report = MetricReport::from_scores(&scores)?;
    match &args.out {
        Some(path) => std::fs::write(path, &text).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{text}"),
    }
    println!("{}", serde_json::to_string_pretty(&report).context("serializing report")?);
    Ok(())
}

/// Reads "value" or "name,value" lines; a non-numeric first line is a header.
fn read_scores(path: &Path) -> CliResult<Vec<(Option<String>, f64)>> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (name, value) = match line.rsplit_once(',') {
            Some((n, v)) => (Some(n.trim().to_string()), v.trim()),
            None => (None, line),
        };
        match value.parse::<f64>() {
            Ok(v) => rows.push((name, v)),
            Err(_) if i == 0 => continue,
            Err(_) => return Err(usage(format!("{}:{}: '{value}' is not a number", path.display(), i + 1))),
        }
    }
    Ok(rows)
}

fn mvc(args: &ScoreArgs, a: &Path, b: &Path) -> CliResult<()> {
    let xa = read_scores(a)?;
    let xb = read_scores(b)?;
    if xa.len() != xb.len() {
        return Err(usage(format!("{} has {} scores but {} has {}", a.display(), xa.len(), b.display(), xb.len())));
    }
    let va: Vec<f64> = xa.iter().map(|r| r.1).collect();
    let vb: Vec<f64> = xb.iter().map(|r| r.1).collect();
    let res = mvc_combine(&va, &vb).map_err(|e| usage(e.to_string()))?;
    println!("c = {}", res.weight);
    if res.degenerate {
        println!("the two score lists are identical; using c = 0.5");
    }
    let mut text = String::from("name,a,b,combined\n");
    for (i, ((row, y), c)) in xa.iter().zip(&vb).zip(&res.combined).enumerate() {
        let name = row.0.clone().unwrap_or_else(|| i.to_string());
        writeln!(text, "{name},{},{y},{c}", row.1).unwrap();
    }
    if let Some(path) = &args.out {
        std::fs::write(path, &text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

pub fn run(args: ScoreArgs) -> CliResult<()> {
    if let Some(files) = &args.mvc {
        return mvc(&args, &files[0], &files[1]);
    }
    match (&args.reference, &args.test) {
        (Some(r), Some(t)) => score(&args, r, t),
        _ => Err(usage("--ref and --test are both required")),
    }
}

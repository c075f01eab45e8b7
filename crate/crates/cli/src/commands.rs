use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde_json::json;

use ctgru_core::autodiff::{finite_diff_check, random_instance, INSTANCE_WEIGHT_STD};
use ctgru_core::cells::{ctgru_from_gru, ctgru_step, gru_step, CtGruState, GruState};
use ctgru_core::datasets::hawkes::{gen_hawkes_dataset_with, HawkesTaskConfig};
use ctgru_core::datasets::sequences_to_string;
use ctgru_core::datasets::{read_sequences, reindex_by_first_appearance, DatasetStats};
use ctgru_core::metrics::MetricsBundle;
use ctgru_core::model::{head_for_task, BLOCK_NAMES};
use ctgru_core::timescales::{
    half_life_curve, half_life_curve_between, mixture_decay, scale_weights,
};
use ctgru_core::training::{evaluate, train as train_model, TrainConfig};
use ctgru_core::{
    build_bank, Arch, Dataset, HeadKind, ModelParams, ModelSpec, RngStream, SyntheticTask,
    TimescaleBank, Vector,
};

use crate::manifest::{file_sha256, RunManifest};
use crate::{
    AnalyzeArgs, EquivalenceArgs, EvalArgs, GenerateArgs, GradcheckArgs, ReindexArgs, TrainArgs,
};

pub enum Outcome {
    Pass,
    /// A numerical check ran but missed its tolerance.
    CheckFailed,
}

/// Puts `# manifest <hash>` right after the first (header) line.
fn stamp(text: &str, hash: &str) -> String {
    match text.split_once('\n') {
        Some((head, rest)) => format!("{head}\n# manifest {hash}\n{rest}"),
        None => format!("{text}\n# manifest {hash}\n"),
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn read_data(path: &Path) -> Result<Dataset> {
    read_sequences(path).with_context(|| format!("reading {}", path.display()))
}

pub fn generate(a: &GenerateArgs) -> Result<Outcome> {
    let task = SyntheticTask::from_name(&a.task).ok_or_else(|| {
        let names: Vec<&str> = SyntheticTask::ALL.iter().map(|t| t.name()).collect();
        anyhow!(
            "unknown task `{}` (expected one of {})",
            a.task,
            names.join(", ")
        )
    })?;
    if (a.hawkes_alpha.is_some() || a.hawkes_mu.is_some()) && task != SyntheticTask::Hawkes {
        bail!("--hawkes-alpha/--hawkes-mu apply only to the hawkes task");
    }
    if a.n_train == 0 || a.n_test == 0 {
        bail!("--n-train and --n-test must be positive");
    }
    let rng = RngStream::new(a.seed);
    let mut hawkes = HawkesTaskConfig::default();
    if let Some(alpha) = a.hawkes_alpha {
        hawkes.alpha = alpha;
    }
    if let Some(mu) = a.hawkes_mu {
        hawkes.mu = mu;
    }
    let make = |split: &str, n: usize| -> Result<Dataset> {
        let r = rng.split(split);
        Ok(match task {
            SyntheticTask::Hawkes => gen_hawkes_dataset_with(&r, n, &hawkes)?.0,
            _ => task.generate(&r, n)?,
        })
    };
    let train = make("train", a.n_train)?;
    let test = make("test", a.n_test)?;

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let paths = [
        a.out.join("train.seq"),
        a.out.join("test.seq"),
        a.out.join("stats.json"),
    ];
    let mut options = json!({
        "task": task.name(),
        "n_train": a.n_train,
        "n_test": a.n_test,
    });
    if task == SyntheticTask::Hawkes {
        options["hawkes_alpha"] = json!(hawkes.alpha);
        options["hawkes_mu"] = json!(hawkes.mu);
    }
    let mut manifest = RunManifest::new("generate", options);
    manifest.seed = Some(a.seed);
    for p in &paths {
        manifest = manifest.output(p);
    }
    let hash = manifest.hash();

    write(&paths[0], &stamp(&sequences_to_string(&train)?, &hash))?;
    write(&paths[1], &stamp(&sequences_to_string(&test)?, &hash))?;

    let report = |d: &Dataset| {
        let s = d.stats();
        let mut v = serde_json::to_value(&s).expect("stats serialize");
        if task == SyntheticTask::Hawkes {
            // pooled over labels, so the per-label rate is the rate / labels
            let per_label = s.event_rate / d.vocab as f64;
            let expected = hawkes.mu / (1.0 - hawkes.alpha);
            v["per_label_rate"] = json!(per_label);
            v["expected_per_label_rate"] = json!(expected);
        }
        v
    };
    let stats = json!({
        "manifest": hash,
        "task": task.name(),
        "train": report(&train),
        "test": report(&test),
    });
    write(&paths[2], &(serde_json::to_string_pretty(&stats)? + "\n"))?;
    manifest.write_beside(&paths[2])?;

    for (name, d) in [("train", &train), ("test", &test)] {
        let s: DatasetStats = d.stats();
        print!(
            "{name}: {} sequences, lengths {}..{} (mean {:.1}), rate {:.4}",
            s.sequences, s.min_len, s.max_len, s.mean_len, s.event_rate
        );
        if let Some(p) = s.positive_fraction {
            print!(", positive fraction {p:.4}");
        }
        println!();
    }
    if task == SyntheticTask::Hawkes {
        println!(
            "per-label rate {:.5} (expected {:.5})",
            train.stats().event_rate / train.vocab as f64,
            hawkes.mu / (1.0 - hawkes.alpha)
        );
    }
    println!("wrote {}", a.out.display());
    Ok(Outcome::Pass)
}

/// Reads `arch` and the training options from a flat TOML file.
pub fn load_config(path: &Path) -> Result<(Arch, TrainConfig)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut table: toml::Table = text
        .parse()
        .with_context(|| format!("parsing {}", path.display()))?;
    let arch = match table.remove("arch") {
        Some(toml::Value::String(s)) => {
            Arch::from_name(&s).ok_or_else(|| anyhow!("unknown arch `{s}`"))?
        }
        Some(_) => bail!("`arch` must be a string"),
        None => bail!("config needs an `arch` key"),
    };
    // clip_norm = 0 turns clipping off
    let no_clip = matches!(
        table.get("clip_norm"),
        Some(toml::Value::Float(f)) if *f == 0.0
    ) || matches!(table.get("clip_norm"), Some(toml::Value::Integer(0)));
    if no_clip {
        table.remove("clip_norm");
    }
    let mut config: TrainConfig = table
        .try_into()
        .with_context(|| format!("invalid training options in {}", path.display()))?;
    if no_clip {
        config.clip_norm = None;
    }
    config.validate()?;
    Ok((arch, config))
}

pub fn train(a: &TrainArgs) -> Result<Outcome> {
    let (arch, mut config) = load_config(&a.config)?;
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    let data_path: PathBuf = if a.data.is_dir() {
        a.data.join("train.seq")
    } else {
        a.data.clone()
    };
    let data = read_data(&data_path)?;
    let test = a.test.as_deref().map(read_data).transpose()?;

    let spec = ModelSpec::new(
        arch,
        config.hidden_sizes[0],
        data.vocab,
        head_for_task(data.task),
    );
    let (model, mut record) = train_model(spec, &config, &data)?;
    if let Some(test) = &test {
        let ev = evaluate(&model, test, Some(&data))?;
        record.test_metrics = Some(ev.metrics);
        record.baseline = Some(ev.baseline);
    }

    let mut record_path = a.out.as_os_str().to_owned();
    record_path.push(".run.jsonl");
    let record_path = PathBuf::from(record_path);
    let mut summary_path = a.out.as_os_str().to_owned();
    summary_path.push(".summary.json");
    let summary_path = PathBuf::from(summary_path);
    let mut manifest = RunManifest::new("train", json!({ "arch": arch.name() }));
    manifest.config = Some(a.config.display().to_string());
    manifest.config_sha256 = Some(file_sha256(&a.config)?);
    manifest.seed = Some(config.seed);
    manifest = manifest.input(&data_path)?;
    if let Some(t) = &a.test {
        manifest = manifest.input(t)?;
    }
    manifest = manifest
        .output(&a.out)
        .output(&record_path)
        .output(&summary_path);
    let hash = manifest.hash();

    write(&a.out, &stamp(&model.to_text(), &hash))?;
    let mut lines = vec![json!({ "manifest": hash }).to_string()];
    lines.extend(record.json_lines());
    write(&record_path, &(lines.join("\n") + "\n"))?;
    let selected = record
        .candidates
        .iter()
        .find(|c| c.hidden == record.selected_hidden);
    let summary = json!({
        "manifest": hash,
        "arch": arch.name(),
        "config": record.config,
        "config_hash": record.config_hash,
        "bank": record.bank,
        "train_sequences": record.train_sequences,
        "val_sequences": record.val_sequences,
        "selected_hidden": record.selected_hidden,
        "selected_epoch": record.selected_epoch,
        "best_val_loss": selected.map(|c| c.best_val_loss),
        "test_metrics": record.test_metrics,
        "baseline": record.baseline,
    });
    write(
        &summary_path,
        &(serde_json::to_string_pretty(&summary)? + "\n"),
    )?;
    manifest.write_beside(&a.out)?;

    println!(
        "{}: selected hidden {} at epoch {} (config {})",
        arch.name(),
        record.selected_hidden,
        record.selected_epoch,
        record.config_hash
    );
    if let (Some(m), Some(b)) = (&record.test_metrics, &record.baseline) {
        println!(
            "test accuracy {:.4} (baseline {:.4})",
            m.accuracy, b.accuracy
        );
    }
    Ok(Outcome::Pass)
}

fn csv_row(model: &str, data: &str, predictor: &str, m: &MetricsBundle) -> String {
    format!("{model},{data},{predictor},{}", m.csv_fields())
}

pub fn eval(a: &EvalArgs) -> Result<Outcome> {
    let model =
        ModelParams::load(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let data = read_data(&a.data)?;
    let train = a.train.as_deref().map(read_data).transpose()?;
    let ev = evaluate(&model, &data, train.as_ref())?;

    let mut manifest = RunManifest::new("eval", json!({}));
    manifest = manifest.input(&a.model)?.input(&a.data)?;
    if let Some(t) = &a.train {
        manifest = manifest.input(t)?;
    }
    if let Some(o) = &a.out {
        manifest = manifest.output(o);
    }
    let hash = manifest.hash();
    let (m, d) = (a.model.display().to_string(), a.data.display().to_string());
    let csv = format!(
        "# manifest {hash}\nmodel,data,predictor,{}\n{}\n{}\n",
        MetricsBundle::CSV_HEADER,
        csv_row(&m, &d, model.spec.arch.name(), &ev.metrics),
        csv_row(&m, &d, "previous-event-baseline", &ev.baseline),
    );
    match &a.out {
        Some(path) => {
            write(path, &csv)?;
            manifest.write_beside(path)?;
        }
        None => print!("{csv}"),
    }
    Ok(Outcome::Pass)
}

fn parse_head(name: &str) -> Result<HeadKind> {
    [
        HeadKind::LabelSoftmax,
        HeadKind::PolarityLogistic,
        HeadKind::SequenceLogistic,
    ]
    .into_iter()
    .find(|h| h.name() == name)
    .ok_or_else(|| anyhow!("unknown head `{name}`"))
}

/// Bank of `m` scales starting at 1.
pub fn bank_with_scales(m: usize) -> Result<(f64, f64)> {
    if m < 2 {
        bail!("a bank needs at least two scales");
    }
    Ok((1.0, 10f64.powf((m - 1) as f64 / 2.0)))
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<Outcome> {
    let archs = match &a.arch {
        Some(n) => vec![Arch::from_name(n).ok_or_else(|| anyhow!("unknown arch `{n}`"))?],
        None => Arch::ALL.to_vec(),
    };
    let heads = match &a.head {
        Some(n) => vec![parse_head(n)?],
        None => vec![
            HeadKind::LabelSoftmax,
            HeadKind::PolarityLogistic,
            HeadKind::SequenceLogistic,
        ],
    };
    let (lo, hi) = bank_with_scales(a.scales)?;
    let root = RngStream::new(a.seed);
    let mut worst_overall: f64 = 0.0;
    println!("arch,head,block,max_relative_error");
    for &arch in &archs {
        for &head in &heads {
            let mut spec = ModelSpec::new(arch, a.hidden, a.vocab, head);
            if arch.is_ctgru() {
                spec = spec.with_bank(lo, hi);
            }
            let mut rng = root.split(arch.name()).split(head.name());
            let mut per_block = vec![0.0f64; BLOCK_NAMES.len()];
            for _ in 0..a.instances {
                let (model, seq) =
                    random_instance(&mut rng, spec.clone(), a.steps, INSTANCE_WEIGHT_STD)?;
                let report = finite_diff_check(&model, &seq, a.eps, &mut rng)?;
                for (w, b) in per_block.iter_mut().zip(&report.blocks) {
                    *w = w.max(b.max_rel_error);
                }
            }
            for (name, err) in BLOCK_NAMES.iter().zip(&per_block) {
                println!("{},{},{name},{err:.3e}", arch.name(), head.name());
            }
            worst_overall = per_block.iter().copied().fold(worst_overall, f64::max);
        }
    }
    let pass = worst_overall <= a.tolerance;
    eprintln!(
        "max relative error {worst_overall:.3e} (tolerance {:.1e}): {}",
        a.tolerance,
        if pass { "PASS" } else { "FAIL" }
    );
    Ok(if pass {
        Outcome::Pass
    } else {
        Outcome::CheckFailed
    })
}

pub fn analyze_scales(a: &AnalyzeArgs) -> Result<Outcome> {
    let bank = match &a.taus {
        Some(t) => TimescaleBank::from_taus(t.clone())?,
        None => build_bank(a.tau_min, a.tau_max)?,
    };
    let half = prefixed(&a.out, "-half-life.csv");
    let decay = prefixed(&a.out, "-decay.csv");
    let mut manifest = RunManifest::new(
        "analyze-scales",
        json!({ "taus": bank.taus(), "points": a.points }),
    );
    manifest = manifest.output(&half).output(&decay);
    let hash = manifest.hash();

    let mut text = format!("# manifest {hash}\ntau,true_half_life,mixture_half_life,ratio\n");
    // a single scale has no interior, so sweep the requested bounds instead
    let curve = if bank.len() == 1 {
        half_life_curve_between(&bank, a.tau_min, a.tau_max, a.points)
    } else {
        half_life_curve(&bank, a.points)
    };
    for p in curve {
        text += &format!(
            "{:.10e},{:.10e},{:.10e},{:.8}\n",
            p.tau,
            p.true_half_life,
            p.mixture_half_life,
            p.mixture_half_life / p.true_half_life
        );
    }
    write(&half, &text)?;

    let mut text = format!("# manifest {hash}\nt,tau,true_decay,mixture_decay\n");
    for tau in (1..=10).map(|i| 10.0 * i as f64) {
        let w = scale_weights(tau.ln(), &bank);
        for i in 0..=150 {
            let t = 2.0 * i as f64;
            text += &format!(
                "{t},{tau},{:.10e},{:.10e}\n",
                (-t / tau).exp(),
                mixture_decay(&w, &bank, t)
            );
        }
    }
    write(&decay, &text)?;
    manifest.write_beside(&half)?;
    println!(
        "bank of {} scales from {} to {}; wrote {} and {}",
        bank.len(),
        bank.shortest(),
        bank.longest(),
        half.display(),
        decay.display()
    );
    Ok(Outcome::Pass)
}

fn prefixed(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Largest `|h_ctgru - h_gru|` over a random run of `steps` events.
pub fn equivalence_deviation(
    seed: u64,
    tau_short: f64,
    tau_long: f64,
    steps: usize,
    hidden: usize,
    vocab: usize,
    dt: f64,
) -> Result<f64> {
    let mut rng = RngStream::new(seed);
    let spec = ModelSpec::new(Arch::GruNoDt, hidden, vocab, HeadKind::LabelSoftmax);
    let (model, _) = random_instance(&mut rng, spec, 1, INSTANCE_WEIGHT_STD)?;
    let ct = ctgru_from_gru(&model.gates, tau_short, tau_long)?;
    let mut g = GruState::zeros(hidden);
    let mut c = CtGruState::zeros(2, hidden);
    let mut worst: f64 = 0.0;
    for _ in 0..steps {
        let x = Vector::one_hot(vocab, rng.below(vocab));
        g = gru_step(&model.gates, &g, &x)?.0;
        c = ctgru_step(&ct, &c, &x, dt)?.0;
        for (a, b) in g.h.iter().zip(c.h.iter()) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}

pub fn equivalence(a: &EquivalenceArgs) -> Result<Outcome> {
    let dev = equivalence_deviation(
        a.seed,
        a.tau_short,
        a.tau_long,
        a.steps,
        a.hidden,
        a.vocab,
        a.dt,
    )?;
    let defaults = a.tau_short == 0.01 && a.tau_long == 1e8;
    let tolerance = a.tolerance.or(defaults.then_some(1e-6));
    println!("max |h_ctgru - h_gru| = {dev:.3e}");
    match tolerance {
        Some(t) if dev > t => {
            eprintln!("deviation exceeds {t:.1e}: FAIL");
            Ok(Outcome::CheckFailed)
        }
        Some(t) => {
            eprintln!("within {t:.1e}: PASS");
            Ok(Outcome::Pass)
        }
        None => Ok(Outcome::Pass),
    }
}

pub fn reindex(a: &ReindexArgs) -> Result<Outcome> {
    let data = read_data(&a.input)?;
    let out = reindex_by_first_appearance(&data, a.cap)?;
    let manifest = RunManifest::new("reindex", json!({ "cap": a.cap }))
        .input(&a.input)?
        .output(&a.output);
    write(
        &a.output,
        &stamp(&sequences_to_string(&out)?, &manifest.hash()),
    )?;
    manifest.write_beside(&a.output)?;
    println!(
        "relabeled {} sequences; vocabulary {}",
        out.len(),
        out.vocab
    );
    Ok(Outcome::Pass)
}

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use topodiag::embedding::{ablation_compare, alignment, knn_retrieval};
use topodiag::gradcheck::{check_losses, DEFAULT_STEP};
use topodiag::io::{
    distance_to_csv, read_confusion_csv, read_distance_csv, read_embeddings, read_loss_config,
    read_minibatch_csv, read_predictions_csv,
};
use topodiag::knot_math::{default_assignments, invariant_distance};
use topodiag::losses::LossConfig;
use topodiag::report::{invariant_section, load_report_config, run_report, FSK_FMB_NOTE};
use topodiag::split::{build_split_manifest, read_metadata_csv};
use topodiag::stats::{
    classification_metrics, confusion_rates, mantel_test, mcnemar, mcnemar_from_counts,
    weight_sensitivity, ConfusionMatrix, CorrelationMethod, PairedPredictions,
    DEFAULT_AMPLITUDE, DEFAULT_PERMUTATIONS, DEFAULT_RHO_THRESHOLD, DEFAULT_VECTORS,
};
use topodiag::taxonomy::difficulty_tiers;
use topodiag::topo_metric::{factor_matrices, FSK_FMB_REPORTED};
use topodiag::validate::{validate_inputs, InputKind};
use topodiag::{
    builtin_taxonomy, load_taxonomy_file, topo_distance, DistanceMatrix, Error, ErrorKind,
    FactorWeights, Taxonomy,
};

const EXIT_VALIDATION: u8 = 1;
const EXIT_COMPUTATION: u8 = 2;
const EXIT_USAGE: u8 = 3;

#[derive(Parser)]
#[command(name = "topodiag", version, about = "Topology-aware diagnostics for knot classifiers")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Taxonomy JSON; the built-in ten-class catalog when absent.
    #[arg(long, global = true)]
    taxonomy: Option<PathBuf>,
    /// Five factor weights, comma separated, summing to 1.
    #[arg(long, global = true, value_delimiter = ',', num_args = 1..)]
    weights: Option<Vec<f64>>,
    #[arg(long, global = true, default_value_t = DEFAULT_PERMUTATIONS)]
    permutations: usize,
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    #[arg(long, global = true, default_value_t = 0.05)]
    alpha: f64,
    /// Bonferroni divisor.
    #[arg(long, global = true)]
    comparisons: Option<usize>,
    /// Output file; standard output when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Five-factor class distance matrix.
    Distance,
    /// Mantel test of the class distance against confusion rates, or of two distance matrices.
    Mantel {
        #[arg(long, conflicts_with_all = ["a", "b"])]
        confusion: Option<PathBuf>,
        #[arg(long, requires = "b")]
        a: Option<PathBuf>,
        #[arg(long, requires = "a")]
        b: Option<PathBuf>,
        #[arg(long, default_value = "spearman")]
        method: CorrelationMethod,
    },
    /// McNemar test from two prediction files or from discordant counts.
    Mcnemar {
        #[arg(long, requires = "predictions_b", conflicts_with_all = ["b_count", "c_count"])]
        predictions_a: Option<PathBuf>,
        #[arg(long, requires = "predictions_a")]
        predictions_b: Option<PathBuf>,
        /// Samples only model A classified correctly.
        #[arg(long = "b", requires = "c_count")]
        b_count: Option<u64>,
        /// Samples only model B classified correctly.
        #[arg(long = "c", requires = "b_count")]
        c_count: Option<u64>,
    },
    /// Accuracy, per-class F1 and macro F1.
    Metrics {
        #[arg(long, conflicts_with = "predictions")]
        confusion: Option<PathBuf>,
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Centroid-distance alignment of an embedding set with a reference distance.
    Align {
        #[arg(long)]
        embeddings: PathBuf,
        /// Reference distance CSV; the five-factor distance when absent.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Cosine k-NN retrieval accuracy.
    Knn {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
        k: Vec<usize>,
    },
    /// Finite-difference check of the auxiliary loss gradients on a mini-batch.
    LossCheck {
        #[arg(long)]
        batch: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_STEP)]
        step: f64,
    },
    /// Weight-perturbation Monte Carlo of the distance/confusion correlation.
    Sensitivity {
        #[arg(long)]
        confusion: PathBuf,
        #[arg(long, default_value_t = DEFAULT_AMPLITUDE)]
        amplitude: f64,
        #[arg(long, default_value_t = DEFAULT_VECTORS)]
        vectors: usize,
        #[arg(long, default_value_t = DEFAULT_RHO_THRESHOLD, allow_hyphen_values = true)]
        threshold: f64,
    },
    /// Alignment of several embedding sets against one reference.
    Ablate {
        /// `name=path`, repeatable.
        #[arg(long = "set", required = true)]
        sets: Vec<String>,
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Knot invariants and their agreement with the five-factor distance.
    Invariants,
    /// Easy, Medium and Hard class tiers.
    Tiers,
    /// Train/validation/test manifest from sample metadata.
    Split {
        #[arg(long)]
        metadata: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        holdout: f64,
    },
    /// Full diagnostic report from a JSON config.
    Report {
        #[arg(long)]
        config: PathBuf,
    },
    /// Schema and label checks; `kind:path` forces a format.
    Validate {
        #[arg(required = true)]
        paths: Vec<String>,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e.kind() {
            ErrorKind::Validation => EXIT_VALIDATION,
            ErrorKind::Computation => EXIT_COMPUTATION,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

type CliResult<T> = Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(f) = configure_threads().and_then(|_| run(&cli)) {
        eprintln!("error: {}", f.message);
        return ExitCode::from(f.code);
    }
    ExitCode::SUCCESS
}

fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("TOPODIAG_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| usage(format!("TOPODIAG_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| usage(e.to_string()))
}

impl Common {
    fn taxonomy(&self) -> CliResult<Taxonomy> {
        Ok(match &self.taxonomy {
            Some(p) => load_taxonomy_file(p)?,
            None => builtin_taxonomy(),
        })
    }

    fn weights(&self) -> CliResult<FactorWeights> {
        match &self.weights {
            None => Ok(FactorWeights::DEFAULT),
            Some(w) => {
                let arr: [f64; 5] = w
                    .as_slice()
                    .try_into()
                    .map_err(|_| usage(format!("--weights needs 5 values, got {}", w.len())))?;
                FactorWeights::from_user(arr).map_err(|e| usage(e.to_string()))
            }
        }
    }

    fn distance(&self, tax: &Taxonomy) -> CliResult<DistanceMatrix> {
        Ok(topo_distance(&factor_matrices(tax), &self.weights()?))
    }

    fn reference(&self, tax: &Taxonomy, path: Option<&Path>) -> CliResult<DistanceMatrix> {
        match path {
            Some(p) => Ok(read_distance_csv(p)?),
            None => self.distance(tax),
        }
    }

    fn emit(&self, json: &Value, csv: Option<String>) -> CliResult<()> {
        let text = match (self.format, csv) {
            (Format::Json, _) => serde_json::to_string_pretty(json).expect("json value serialises") + "\n",
            (Format::Csv, Some(c)) => c,
            (Format::Csv, None) => return Err(usage("--format csv is not available for this command")),
        };
        match &self.out {
            Some(p) => std::fs::write(p, text).map_err(|e| Failure {
                code: EXIT_VALIDATION,
                message: format!("cannot write {}: {e}", p.display()),
            }),
            None => std::io::stdout()
                .write_all(text.as_bytes())
                .map_err(|e| Failure {
                    code: EXIT_VALIDATION,
                    message: format!("cannot write to standard output: {e}"),
                }),
        }
    }
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("result serialises")
}

fn run(cli: &Cli) -> CliResult<()> {
    let c = &cli.common;
    match &cli.command {
        Command::Distance => {
            let tax = c.taxonomy()?;
            let w = c.weights()?;
            let d = topo_distance(&factor_matrices(&tax), &w);
            let mut out = json!({
                "labels": d.labels(),
                "weights": w,
                "matrix": d.values().to_rows(),
            });
            if let Ok(v) = d.lookup("FSK", "FMB") {
                out["fsk_fmb"] = json!({ "computed": v, "reported": FSK_FMB_REPORTED, "note": FSK_FMB_NOTE });
            }
            c.emit(&out, Some(distance_to_csv(&d)))
        }
        Command::Mantel { confusion, a, b, method } => {
            let (x, y) = match (confusion, a, b) {
                (Some(cp), _, _) => {
                    let cm = read_confusion_csv(cp)?;
                    let d = c.distance(&c.taxonomy()?)?.restrict(cm.labels())?;
                    (d, confusion_rates(&cm)?)
                }
                (None, Some(a), Some(b)) => {
                    let da = read_distance_csv(a)?;
                    let db = read_distance_csv(b)?.restrict(da.labels())?;
                    (da, db)
                }
                _ => return Err(usage("mantel needs --confusion or both --a and --b")),
            };
            let r = mantel_test(x.values(), y.values(), c.permutations, c.seed, *method)?;
            let mut v = to_value(&r);
            v["seed"] = json!(c.seed);
            v["labels"] = json!(x.labels());
            c.emit(&v, None)
        }
        Command::Mcnemar {
            predictions_a,
            predictions_b,
            b_count,
            c_count,
        } => {
            let comparisons = c.comparisons.unwrap_or(1);
            let r = match (predictions_a, predictions_b, b_count, c_count) {
                (Some(pa), Some(pb), _, _) => {
                    let pp = PairedPredictions::join(&read_predictions_csv(pa)?, &read_predictions_csv(pb)?)?;
                    mcnemar(&pp, c.alpha, comparisons)?
                }
                (_, _, Some(b), Some(cc)) => mcnemar_from_counts(*b, *cc, c.alpha, comparisons)?,
                _ => return Err(usage("mcnemar needs --predictions-a/--predictions-b or --b/--c")),
            };
            let csv = format!(
                "b,c,chi2,p_value,corrected_alpha,significant\n{},{},{},{},{},{}\n",
                r.b, r.c, r.chi2, r.p_value, r.corrected_alpha, r.significant
            );
            c.emit(&to_value(&r), Some(csv))
        }
        Command::Metrics { confusion, predictions } => {
            let cm = match (confusion, predictions) {
                (Some(p), _) => read_confusion_csv(p)?,
                (None, Some(p)) => confusion_from_predictions(&c.taxonomy()?, &read_predictions_csv(p)?)?,
                _ => return Err(usage("metrics needs --confusion or --predictions")),
            };
            let m = classification_metrics(&cm)?;
            let mut csv = String::from("class,f1\n");
            for (l, f) in cm.labels().iter().zip(&m.per_class_f1) {
                csv.push_str(&format!("{l},{f}\n"));
            }
            csv.push_str(&format!("macro,{}\naccuracy,{}\n", m.macro_f1, m.accuracy));
            let mut v = to_value(&m);
            v["labels"] = json!(cm.labels());
            c.emit(&v, Some(csv))
        }
        Command::Align { embeddings, reference } => {
            let tax = c.taxonomy()?;
            let emb = read_embeddings(embeddings, &tax)?;
            let d = c.reference(&tax, reference.as_deref())?;
            c.emit(&to_value(&alignment(&emb, &d, c.permutations, c.seed)?), None)
        }
        Command::Knn { train, test, k } => {
            let tax = c.taxonomy()?;
            let r = knn_retrieval(&read_embeddings(train, &tax)?, &read_embeddings(test, &tax)?, k)?;
            let mut csv = String::from("k,accuracy\n");
            for (k, acc) in &r.per_k {
                csv.push_str(&format!("{k},{acc}\n"));
            }
            c.emit(&to_value(&r), Some(csv))
        }
        Command::LossCheck {
            batch,
            config,
            reference,
            step,
        } => {
            let tax = c.taxonomy()?;
            let d = c.reference(&tax, reference.as_deref())?;
            let cfg = match config {
                Some(p) => read_loss_config(p)?,
                None => LossConfig::default(),
            };
            cfg.warn_if_tau_uninformative(&d);
            let b = read_minibatch_csv(batch, d.labels())?;
            let r = check_losses(&b, &d, &cfg, *step)?;
            let mut v = to_value(&r);
            v["config"] = to_value(&cfg);
            v["step"] = json!(step);
            c.emit(&v, None)
        }
        Command::Sensitivity {
            confusion,
            amplitude,
            vectors,
            threshold,
        } => {
            let tax = c.taxonomy()?;
            let fm = factor_matrices(&tax);
            let cm = read_confusion_csv(confusion)?.reordered(fm.labels())?;
            let r = weight_sensitivity(&cm, &fm, &c.weights()?, *amplitude, *vectors, c.seed, *threshold)?;
            c.emit(&to_value(&r), None)
        }
        Command::Ablate { sets, reference } => {
            let tax = c.taxonomy()?;
            let d = c.reference(&tax, reference.as_deref())?;
            let loaded = sets
                .iter()
                .map(|s| {
                    let (name, path) = s
                        .split_once('=')
                        .ok_or_else(|| usage(format!("--set expects name=path, got `{s}`")))?;
                    Ok((name.to_string(), read_embeddings(Path::new(path), &tax)?))
                })
                .collect::<CliResult<Vec<_>>>()?;
            let rows = ablation_compare(&loaded, &d, c.permutations, c.seed)?;
            let mut csv = String::from("name,spearman,pearson,mantel_p\n");
            for r in &rows {
                csv.push_str(&format!(
                    "{},{},{},{}\n",
                    r.name, r.alignment.spearman, r.alignment.pearson, r.alignment.mantel_p
                ));
            }
            c.emit(&to_value(&rows), Some(csv))
        }
        Command::Invariants => {
            let d = c.distance(&c.taxonomy()?)?;
            let section = invariant_section(&d)?;
            let all = invariant_distance(&default_assignments())?;
            let mut csv = String::from("a,b,invariant,heuristic\n");
            for p in &section.validation.pairs {
                csv.push_str(&format!("{},{},{},{}\n", p.a, p.b, p.invariant, p.heuristic));
            }
            let mut v = to_value(&section);
            v["all_assignments"] = to_value(&all);
            c.emit(&v, Some(csv))
        }
        Command::Tiers => {
            let tiers = difficulty_tiers();
            let mut csv = String::from("tier,code\n");
            for t in &tiers {
                for m in &t.members {
                    csv.push_str(&format!("{:?},{m}\n", t.tier));
                }
            }
            c.emit(&to_value(&tiers), Some(csv))
        }
        Command::Split { metadata, holdout } => {
            let tax = c.taxonomy()?;
            let meta = read_metadata_csv(metadata)?;
            let m = build_split_manifest(&meta, &tax, *holdout, c.seed)?;
            let mut csv = String::from("path,split\n");
            for (name, list) in [("train", &m.train), ("val", &m.val), ("test", &m.test)] {
                for p in list {
                    csv.push_str(&format!("{p},{name}\n"));
                }
            }
            c.emit(&to_value(&m), Some(csv))
        }
        Command::Report { config } => {
            let cfg = load_report_config(config)?;
            let base = config.parent().unwrap_or(Path::new("."));
            let report = run_report(&cfg, base)?;
            for e in &report.errors {
                log::warn!("{e}");
            }
            c.emit(&to_value(&report), None)?;
            if report.errors.is_empty() {
                Ok(())
            } else {
                Err(Failure {
                    code: EXIT_VALIDATION,
                    message: format!("{} report input(s) failed; see `errors`", report.errors.len()),
                })
            }
        }
        Command::Validate { paths } => {
            let tax = c.taxonomy()?;
            let parsed = paths
                .iter()
                .map(|s| parse_validate_arg(s))
                .collect::<CliResult<Vec<_>>>()?;
            let report = validate_inputs(&parsed, &tax);
            let mut v = to_value(&report);
            v["errors"] = json!(report.errors());
            c.emit(&v, None)?;
            if report.is_ok() {
                Ok(())
            } else {
                Err(Failure {
                    code: EXIT_VALIDATION,
                    message: report.errors().join("\n"),
                })
            }
        }
    }
}

fn parse_validate_arg(s: &str) -> CliResult<(Option<InputKind>, PathBuf)> {
    if let Some((kind, path)) = s.split_once(':') {
        if let Ok(k) = kind.parse::<InputKind>() {
            return Ok((Some(k), PathBuf::from(path)));
        }
    }
    Ok((None, PathBuf::from(s)))
}

fn confusion_from_predictions(
    tax: &Taxonomy,
    preds: &[topodiag::stats::Prediction],
) -> CliResult<ConfusionMatrix> {
    let pairs = preds
        .iter()
        .map(|p| Ok((tax.require_index(&p.true_label)?, tax.require_index(&p.predicted_label)?)))
        .collect::<Result<Vec<_>, Error>>()?;
    Ok(ConfusionMatrix::from_pairs(tax.codes(), pairs)?)
}

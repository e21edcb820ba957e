use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use damr::dataset::{self, Dataset, Split};
use damr::experiment::{self, receiver_label};
use damr::metrics::{self, Comparison};
use damr::models::{self, FeatureTap, ModelKind};
use damr::nn::{self, EpochStats, Network, TrainReport};
use damr::protocols::Method;
use damr::seed;
use damr::simnet::{self, Artifacts};

use crate::config::Config;
use crate::CliError;

fn load_config(path: &Path) -> Result<(Config, String), CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Missing(format!("cannot read config {}: {e}", path.display())))?;
    Ok((Config::parse(&text)?, text))
}

/// Creates the output directory and stores the config next to the outputs.
fn prepare_output(cfg: &Config, text: &str) -> Result<(), CliError> {
    fs::create_dir_all(cfg.output_dir.join("models")).map_err(CliError::runtime)?;
    fs::write(cfg.output_dir.join("config.conf"), text).map_err(CliError::runtime)
}

fn parse_method(s: &str) -> Result<Method, CliError> {
    s.parse().map_err(CliError::Schema)
}

fn slug(method: Method) -> String {
    method.name().to_ascii_lowercase()
}

fn require(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Missing(format!("{} does not exist", path.display())))
    }
}

fn load_data(cfg: &Config) -> Result<(Dataset, Split), CliError> {
    require(&cfg.dataset)?;
    let data = Dataset::load(&cfg.dataset).map_err(CliError::runtime)?;
    let split = dataset::split_dataset(&data.labels(), &cfg.split, cfg.split_seed).map_err(CliError::runtime)?;
    Ok((data, split))
}

fn model_path(cfg: &Config, label: &str) -> PathBuf {
    cfg.output_dir.join("models").join(format!("{label}.tmnw"))
}

fn manifest_path(cfg: &Config, label: &str) -> PathBuf {
    cfg.output_dir.join("models").join(format!("{label}.manifest"))
}

fn head_label(tap: FeatureTap) -> &'static str {
    match tap {
        FeatureTap::Logits8 => "head_f8",
        FeatureTap::Hidden256 => "head_f256",
    }
}

fn log_epoch(label: &str) -> impl FnMut(&EpochStats) + '_ {
    move |s| {
        let val = match (s.val_loss, s.val_accuracy) {
            (Some(l), Some(a)) => format!(" val_loss={l:.4} val_acc={a:.4}"),
            _ => String::new(),
        };
        eprintln!(
            "{label} epoch {} train_loss={:.4} train_acc={:.4}{val}",
            s.epoch, s.train_loss, s.train_accuracy
        );
    }
}

fn save_model(cfg: &Config, label: &str, net: &Network, report: &TrainReport) -> Result<(), CliError> {
    let path = model_path(cfg, label);
    nn::write_checkpoint_file(&path, &net.params().layers).map_err(CliError::runtime)?;
    let mut history = String::from("epoch,train_loss,train_accuracy,val_loss,val_accuracy\n");
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
    for s in &report.history {
        history.push_str(&format!(
            "{},{:.6},{:.6},{},{}\n",
            s.epoch,
            s.train_loss,
            s.train_accuracy,
            opt(s.val_loss),
            opt(s.val_accuracy)
        ));
    }
    fs::write(cfg.output_dir.join("models").join(format!("{label}_history.csv")), history).map_err(CliError::runtime)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn load_model(cfg: &Config, label: &str, kind: ModelKind, n_rx: usize) -> Result<Network, CliError> {
    let path = model_path(cfg, label);
    require(&path)?;
    let layers = nn::read_checkpoint_file(&path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let spec = models::build(kind, n_rx).map_err(CliError::runtime)?;
    Network::from_params(spec, layers).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn load_backbones(cfg: &Config, n_rx: usize) -> Result<Vec<Network>, CliError> {
    (0..n_rx)
        .map(|rx| load_model(cfg, &receiver_label(rx), ModelKind::Vtcnn2, 1))
        .collect()
}

/// `label = sha256` lines for the frozen backbones followed by the head.
fn manifest(backbones: &[Network], label: &str, head: &Network) -> String {
    let mut text = String::new();
    for (rx, net) in backbones.iter().enumerate() {
        text.push_str(&format!("{} = {}\n", receiver_label(rx), experiment::checkpoint_digest(net)));
    }
    text.push_str(&format!("{label} = {}\n", experiment::checkpoint_digest(head)));
    text
}

/// Loads a fusion head and checks it was trained on the current backbones.
fn load_head(cfg: &Config, tap: FeatureTap, backbones: &[Network]) -> Result<Network, CliError> {
    let label = head_label(tap);
    let head = load_model(cfg, label, tap.head_kind(), backbones.len())?;
    let path = manifest_path(cfg, label);
    require(&path)?;
    let recorded = fs::read_to_string(&path).map_err(CliError::runtime)?;
    if recorded != manifest(backbones, label, &head) {
        return Err(CliError::Runtime(format!(
            "{label} was trained on different receiver backbones; retrain it"
        )));
    }
    Ok(head)
}

fn load_artifacts(cfg: &Config, n_rx: usize, methods: &[Method]) -> Result<Artifacts, CliError> {
    let mut art = Artifacts::default();
    let need_backbones = methods.iter().any(|m| *m != Method::CentAmr);
    if need_backbones {
        art.receivers = load_backbones(cfg, n_rx)?;
    }
    for &m in methods {
        match m {
            Method::CentAmr => art.cent = Some(load_model(cfg, "centamr", ModelKind::Vtcnn2Cent, n_rx)?),
            Method::DamrF8 => art.head_f8 = Some(load_head(cfg, FeatureTap::Logits8, &art.receivers)?),
            Method::DamrF256 => art.head_f256 = Some(load_head(cfg, FeatureTap::Hidden256, &art.receivers)?),
            Method::Lamr | Method::DamrV => {}
        }
    }
    Ok(art)
}

pub fn gen_data(config: &Path) -> Result<(), CliError> {
    let (cfg, text) = load_config(config)?;
    prepare_output(&cfg, &text)?;
    if let Some(dir) = cfg.dataset.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(CliError::runtime)?;
    }
    let header = dataset::generate_dataset(&cfg.dataset, &cfg.generate).map_err(CliError::runtime)?;
    println!(
        "wrote {} ({} records, {} receivers, {} bytes)",
        cfg.dataset.display(),
        header.n_records,
        header.n_rx,
        header.file_len()
    );
    Ok(())
}

pub fn train(config: &Path, method: &str) -> Result<(), CliError> {
    let (cfg, text) = load_config(config)?;
    let method = parse_method(method)?;
    prepare_output(&cfg, &text)?;
    let (data, split) = load_data(&cfg)?;
    let records = &data.records;
    let n_rx = data.header.n_rx as usize;
    match method {
        Method::Lamr => {
            for rx in 0..n_rx {
                let label = receiver_label(rx);
                let (net, report) = experiment::train_receiver(records, &split, rx, &cfg.train, &mut log_epoch(&label))
                    .map_err(CliError::runtime)?;
                save_model(&cfg, &label, &net, &report)?;
            }
        }
        Method::CentAmr => {
            let (net, report) =
                experiment::train_cent(records, &split, &cfg.train, &mut log_epoch("centamr")).map_err(CliError::runtime)?;
            save_model(&cfg, "centamr", &net, &report)?;
        }
        Method::DamrF8 | Method::DamrF256 => {
            let tap = method.feature_tap().unwrap();
            let label = head_label(tap);
            let backbones = load_backbones(&cfg, n_rx)?;
            let outputs = experiment::backbone_outputs(&backbones, records).map_err(CliError::runtime)?;
            let (head, report) =
                experiment::train_head(tap, &outputs, &split, &cfg.train, &mut log_epoch(label)).map_err(CliError::runtime)?;
            save_model(&cfg, label, &head, &report)?;
            fs::write(manifest_path(&cfg, label), manifest(&backbones, label, &head)).map_err(CliError::runtime)?;
        }
        Method::DamrV => {
            return Err(CliError::Schema(
                "DAMR-V has no trainable parameters of its own; train lamr instead".into(),
            ))
        }
    }
    Ok(())
}

pub fn eval(config: &Path, method: &str) -> Result<(), CliError> {
    let (cfg, text) = load_config(config)?;
    let method = parse_method(method)?;
    prepare_output(&cfg, &text)?;
    let (data, split) = load_data(&cfg)?;
    let n_rx = data.header.n_rx as usize;
    let art = load_artifacts(&cfg, n_rx, &[method])?;
    let results = experiment::evaluate_methods(&art, &data.records, &split.test, cfg.bin_width_db, &[method])
        .map_err(CliError::runtime)?;
    let rows: Vec<_> = results.iter().collect();
    let stem = slug(method);
    let write = |name: String, f: &dyn Fn(&Path) -> Result<(), metrics::MetricsError>| -> Result<(), CliError> {
        let path = cfg.output_dir.join(name);
        f(&path).map_err(CliError::runtime)?;
        println!("wrote {}", path.display());
        Ok(())
    };
    write(format!("eval_{stem}.csv"), &|p| metrics::write_accuracy(&rows, p))?;
    write(format!("f1_vs_snr_{stem}.csv"), &|p| metrics::write_curves(&rows, p))?;
    write(format!("confusion_{stem}.csv"), &|p| metrics::write_confusion(&rows, p))?;
    for r in &results {
        let who = r.receiver.map_or(String::new(), |rx| format!(" rx{rx}"));
        println!(
            "{}{who} accuracy={:.6} macro_f1={:.6}",
            r.method, r.evaluation.accuracy, r.evaluation.macro_f1
        );
    }
    Ok(())
}

fn perf_observations(cfg: &Config) -> Result<Vec<damr::channel::MultiRxObservation>, CliError> {
    let n = cfg.perf_warmup + cfg.perf_samples;
    let params = dataset::GenerateParams {
        n_records: n as u64,
        seed: seed::derive(cfg.generate.seed, 0x7065_7266),
        ..cfg.generate.clone()
    };
    let labels = dataset::label_schedule(n as u64, params.seed);
    (0..n)
        .map(|k| dataset::generate_observation(&params, k as u64, labels[k]).map_err(CliError::runtime))
        .collect()
}

fn measure(cfg: &Config, method: Method, art: &Artifacts) -> Result<simnet::PerfReport, CliError> {
    if method == Method::Lamr {
        return Err(CliError::Schema("LAMR exchanges no messages; bench a networked method".into()));
    }
    let obs = perf_observations(cfg)?;
    simnet::measure_perf(method, art, &obs, cfg.perf_warmup).map_err(CliError::runtime)
}

pub fn compare(config: &Path, with_perf: bool) -> Result<(), CliError> {
    let (cfg, text) = load_config(config)?;
    prepare_output(&cfg, &text)?;
    let (data, split) = load_data(&cfg)?;
    let n_rx = data.header.n_rx as usize;
    let art = load_artifacts(&cfg, n_rx, &Method::ALL)?;
    let results = experiment::evaluate_methods(&art, &data.records, &split.test, cfg.bin_width_db, &Method::ALL)
        .map_err(CliError::runtime)?;
    let perf = if with_perf {
        Method::NETWORKED
            .iter()
            .map(|&m| measure(&cfg, m, &art))
            .collect::<Result<Vec<_>, _>>()?
    } else {
        Vec::new()
    };
    let cmp = Comparison { n_rx, results, perf };
    let paths = metrics::emit_comparison(&cmp, &cfg.output_dir.join("compare")).map_err(CliError::runtime)?;
    for p in paths {
        println!("wrote {}", p.display());
    }
    let mut out = std::io::stdout().lock();
    for m in Method::ALL {
        let acc = cmp.accuracy(m).unwrap_or(f64::NAN);
        writeln!(out, "{m} accuracy={acc:.6}").map_err(CliError::runtime)?;
    }
    Ok(())
}

pub fn bench(config: &Path, method: &str) -> Result<(), CliError> {
    let (cfg, text) = load_config(config)?;
    let method = parse_method(method)?;
    prepare_output(&cfg, &text)?;
    let art = load_artifacts(&cfg, cfg.generate.n_rx, &[method])?;
    let report = measure(&cfg, method, &art)?;
    let path = cfg.output_dir.join(format!("perf_{}.csv", slug(method)));
    metrics::write_perf(std::slice::from_ref(&report), &path).map_err(CliError::runtime)?;
    println!("wrote {}", path.display());
    println!(
        "{method} latency_ms={:.3} throughput={:.3}/s n={}",
        report.latency_ms_per_sample, report.throughput_samples_per_sec, report.n_samples
    );
    Ok(())
}

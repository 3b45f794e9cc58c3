use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndpoly::data::{read_bands, schema_for, write_samples};
use ndpoly::model::{default_band_names, export_expression};
use ndpoly::spectral::evaluate_batch;
use ndpoly::{
    discover, enumerate_features, generate_synthetic, read_samples, pipeline, Dialect, DiscoveryConfig,
    Error, FeatureSpace, Method, NegativePolicy, ReadOptions, Result, Schema, SplitStrategy, SynthParams,
    TrainedModel,
};

use crate::args::{
    Cli, Command, DiscoverArgs, EmbedArgs, EmbedMode, EvaluateArgs, ExpandArgs, ExportArgs, ReadArgs,
    SynthArgs,
};
use crate::output::{create_dir, json, matrix_csv, read_text, write_atomic};

/// Result of a successful command.
#[derive(Debug, Default)]
pub struct Outcome {
    pub code: u8,
    pub artifacts: Vec<PathBuf>,
    pub summary: String,
}

impl Outcome {
    pub const VALIDATION: u8 = 1;
    pub const RUNTIME: u8 = 2;

    fn write(&mut self, path: PathBuf, bytes: &[u8]) -> Result<()> {
        write_atomic(&path, bytes)?;
        self.artifacts.push(path);
        Ok(())
    }
}

pub fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Discover(a) => cmd_discover(a),
        Command::ExportExpression(a) => cmd_export_expression(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Embed(a) => cmd_embed(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Expand(a) => cmd_expand(a),
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(value: &str) -> Result<T> {
    value.parse()
}

fn apply_read(options: &mut ReadOptions, args: &ReadArgs) -> Result<()> {
    if let Some(p) = &args.label_positive {
        options.positive = p.clone();
    }
    if let Some(n) = &args.label_negative {
        options.negative = n.clone();
    }
    if let Some(p) = &args.negative_policy {
        options.negative_policy = parse(p)?;
    }
    if let Some(s) = args.scale_factor {
        options.scale_factor = s;
    }
    Ok(())
}

fn load_schema(path: &Path) -> Result<Schema> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}

fn header(path: &Path) -> Result<Vec<String>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        other => Error::Schema(format!("{}: {other:?}", path.display())),
    })?;
    Ok(reader.headers()?.iter().map(|h| h.trim().to_string()).collect())
}

fn is_band_column(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some('b' | 'B'))
        && !name[1..].is_empty()
        && name[1..].bytes().all(|b| b.is_ascii_digit())
}

/// Band columns named `b<number>` (either case) in file order.
fn detect_bands(path: &Path) -> Result<Vec<String>> {
    let bands: Vec<String> = header(path)?.into_iter().filter(|h| is_band_column(h)).collect();
    if bands.is_empty() {
        return Err(Error::Schema(format!(
            "{}: no band columns found (expected b1, b2, ...); pass --schema",
            path.display()
        )));
    }
    Ok(bands)
}

fn schema_or_detect(schema: Option<&Path>, samples: &Path) -> Result<Schema> {
    match schema {
        Some(p) => load_schema(p),
        None => Ok(Schema {
            bands: detect_bands(samples)?,
            label: "label".into(),
            year: None,
            x: None,
            y: None,
        }),
    }
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

fn cmd_discover(args: DiscoverArgs) -> Result<Outcome> {
    let text = read_text(&args.config)?;
    let mut config = DiscoveryConfig::from_json(&text).map_err(|e| e.context(args.config.display().to_string()))?;
    let base = args.config.parent().unwrap_or(Path::new(""));
    config.samples = match (&args.samples, &config.samples) {
        (Some(p), _) => Some(p.clone()),
        (None, Some(p)) => Some(resolve(base, p)),
        (None, None) => None,
    };
    if let Some(p) = &args.schema {
        config.schema = load_schema(p)?;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(d) = args.degree {
        config.degree = d;
    }
    if let Some(e) = args.epsilon {
        config.epsilon = e;
    }
    if let Some(t) = args.threshold {
        config.sweep.epsilon_threshold = t;
    }
    if let Some(k) = args.k_max {
        config.sweep.k_max = k;
    }
    if let Some(methods) = &args.methods {
        config.sweep.methods = methods.iter().map(|m| parse::<Method>(m)).collect::<Result<_>>()?;
    }
    if let Some(s) = &args.split {
        config.cross_validation = match parse::<SplitStrategy>(s)? {
            SplitStrategy::RandomStratified => None,
            other => Some(other),
        };
    }
    apply_read(&mut config.read, &args.read)?;
    config.validate()?;
    if config.sweep.methods.is_empty() {
        return Err(Error::Parameter("at least one selection method is required".into()));
    }
    let samples = config
        .samples
        .clone()
        .ok_or_else(|| Error::Parameter("no sample file: set \"samples\" in the configuration or pass --samples".into()))?;

    let (table, parse_report) = read_samples(&samples, &config.schema, &config.read)?;
    let found = discover(&table, &config)?;

    create_dir(&args.out)?;
    let mut outcome = Outcome::default();
    let out = |name: &str| args.out.join(name);
    outcome.write(out("config.json"), config.to_json()?.as_bytes())?;
    outcome.write(out("parse_report.json"), &json(&parse_report)?)?;
    outcome.write(out("sweep.json"), &json(&found.report)?)?;
    outcome.write(out("sweep.csv"), found.report.to_csv()?.as_bytes())?;
    outcome.write(out("sweep.txt"), found.report.render().as_bytes())?;
    outcome.write(out("evaluation.json"), &json(&found.evaluation)?)?;
    if let Some(cv) = &found.cross_validation {
        outcome.write(out("cross_validation.json"), &json(cv)?)?;
    }
    outcome.write(out("model.json"), found.model.to_document()?.as_bytes())?;

    let mut summary = String::new();
    let _ = writeln!(summary, "samples: {}", parse_report.summary());
    summary.push('\n');
    summary.push_str(&found.report.render());
    summary.push('\n');
    summary.push_str(&found.evaluation.render());
    if let Some(cv) = &found.cross_validation {
        summary.push('\n');
        summary.push_str(&cv.render());
        for w in &cv.warnings {
            eprintln!("warning: {w}");
        }
    }
    outcome.summary = summary;
    Ok(outcome)
}

fn cmd_export_expression(args: ExportArgs) -> Result<Outcome> {
    let dialect: Dialect = parse(&args.dialect)?;
    let model = TrainedModel::load(&args.model)?;
    let bands = args.bands.unwrap_or_else(|| default_band_names(model.n_bands()));
    Ok(Outcome {
        summary: export_expression(&model, dialect, &bands)?,
        ..Outcome::default()
    })
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<Outcome> {
    let model = TrainedModel::load(&args.model)?;
    let schema = schema_or_detect(args.schema.as_deref(), &args.samples)?;
    let mut options = ReadOptions {
        positive: model.positive_label().into(),
        negative: model.negative_label().into(),
        ..ReadOptions::default()
    };
    apply_read(&mut options, &args.read)?;
    let (table, _) = read_samples(&args.samples, &schema, &options)?;
    let report = pipeline::evaluate(&model, &table)?;
    let mut outcome = Outcome {
        summary: report.render(),
        ..Outcome::default()
    };
    let path = args.out.unwrap_or_else(|| PathBuf::from("evaluation.json"));
    outcome.write(path, &json(&report)?)?;
    Ok(outcome)
}

fn feature_names(space: &FeatureSpace) -> Vec<String> {
    space.descriptors().iter().map(ToString::to_string).collect()
}

fn cmd_embed(args: EmbedArgs) -> Result<Outcome> {
    let mut outcome = Outcome::default();
    match args.mode {
        EmbedMode::Class => {
            let path = args
                .model
                .as_deref()
                .ok_or_else(|| Error::Parameter("class mode requires --model".into()))?;
            let model = TrainedModel::load(path)?;
            let embedding = model.class_embedding()?;
            let mut names = vec!["intercept".to_string()];
            names.extend(feature_names(&model.space()?));
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["feature", "coefficient"])?;
            for (name, c) in names.iter().zip(&embedding.coefficients) {
                w.write_record([name.as_str(), &c.to_string()])?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Io {
                path: args.out.clone(),
                source: e.into_error(),
            })?;
            outcome.summary = format!(
                "class embedding: {} coefficients, {} nonzero",
                embedding.len(),
                embedding.support().len()
            );
            outcome.write(args.out, &bytes)?;
        }
        EmbedMode::Pixel => {
            let samples = args
                .samples
                .as_deref()
                .ok_or_else(|| Error::Parameter("pixel mode requires --samples".into()))?;
            let bands = match args.bands {
                Some(b) => b,
                None => detect_bands(samples)?,
            };
            let policy: NegativePolicy = match &args.negative_policy {
                Some(p) => parse(p)?,
                None => NegativePolicy::default(),
            };
            let (rows, _) = read_bands(samples, &bands, policy, args.scale_factor.unwrap_or(1.0))?;
            let space = enumerate_features(bands.len(), args.degree)?;
            let x = evaluate_batch(&rows, &space, args.epsilon)?;
            let bytes = matrix_csv(&feature_names(&space), x.rows().into_iter().map(|r| (r.to_vec(), None)))?;
            outcome.summary = format!("pixel embedding: {} rows x {} columns", x.nrows(), x.ncols());
            outcome.write(args.out, &bytes)?;
        }
    }
    Ok(outcome)
}

fn cmd_synth(args: SynthArgs) -> Result<Outcome> {
    let mut params = SynthParams::default();
    if let Some(s) = args.seed {
        params.seed = s;
    }
    if let Some(n) = args.n_samples {
        params.n_samples = n;
    }
    if let Some(b) = args.band_count {
        params.band_count = b;
    }
    if let Some(s) = args.separation {
        params.separation = s;
    }
    if let Some(n) = args.noise {
        params.noise = n;
    }
    if let Some(p) = args.label_positive {
        params.positive = p;
    }
    if let Some(n) = args.label_negative {
        params.negative = n;
    }
    let table = generate_synthetic(&params)?;
    let mut bytes = Vec::new();
    write_samples(&table, &mut bytes)?;
    let mut outcome = Outcome::default();
    let (pos, neg) = table.class_counts();
    outcome.summary = format!(
        "synthetic scene: {} samples ({} {}, {} {}), {} bands, seed {}",
        table.len(),
        pos,
        table.positive_label(),
        neg,
        table.negative_label(),
        table.n_bands(),
        params.seed
    );
    outcome.write(args.out, &bytes)?;
    if let Some(path) = args.schema {
        outcome.write(path, &json(&schema_for(&table))?)?;
    }
    Ok(outcome)
}

fn cmd_expand(args: ExpandArgs) -> Result<Outcome> {
    let schema = schema_or_detect(args.schema.as_deref(), &args.samples)?;
    let mut options = ReadOptions::default();
    apply_read(&mut options, &args.read)?;
    let (table, _) = read_samples(&args.samples, &schema, &options)?;
    let space = enumerate_features(table.n_bands(), args.degree)?;
    let x = table.features(&space, args.epsilon)?;
    let mut names = feature_names(&space);
    names.push(schema.label.clone());
    let rows = x
        .rows()
        .into_iter()
        .zip(table.labels())
        .map(|(r, &l)| (r.to_vec(), Some(table.label_name(l))));
    let bytes = matrix_csv(&names, rows)?;
    let mut outcome = Outcome {
        summary: format!("feature matrix: {} rows x {} features", x.nrows(), x.ncols()),
        ..Outcome::default()
    };
    outcome.write(args.out, &bytes)?;
    Ok(outcome)
}

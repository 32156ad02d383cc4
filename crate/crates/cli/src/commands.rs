//! The six pipeline steps. Each writes into its own output directory and
//! leaves a `run.txt` manifest of the resolved configuration there.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use pctrees::georef::{group_species, match_by_rounding};
use pctrees::io::{
    load_manifest_clouds, read_census, read_key_values, read_match_report, write_key_values,
    write_match_report, write_predictions, write_rows, MatchReportRow, Prediction,
};
use pctrees::models::{Model, ModelKind, DESCRIPTION_FILE};
use pctrees::pointcloud::filter_min_points;
use pctrees::raster::{project6, write_pctr, write_pgm, View};
use pctrees::synth::{default_archetypes, generate_dataset, write_dataset, MANIFEST_FILE};
use pctrees::train::{
    argmax, class_key_values, dictionary_from_key_values, evaluate, format_report,
    predict_probabilities, stratified_split, train_model, write_metrics, write_timing, EvalReport,
    InputSpec, Preprocessor,
};
use pctrees::{ClassDictionary, LabeledDataset, LabeledItem, PointCloud};

use crate::config::{FilterStage, RunConfig};
use crate::error::CliError;

pub const RUN_MANIFEST: &str = "run.txt";
pub const MATCHES_FILE: &str = "matches.csv";
pub const CLASSES_FILE: &str = "classes.txt";
pub const SYNTH_CONFIG: &str = "synth.cfg";
pub const MODEL_DIR: &str = "model";
pub const METRICS_FILE: &str = "metrics.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const SPLIT_FILE: &str = "split.csv";
pub const REPORT_FILE: &str = "report.txt";
pub const PREDICTIONS_FILE: &str = "predictions.csv";

type Res<T> = Result<T, CliError>;

fn require_file(path: &Path) -> Res<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::io(format!("{}: no such file", path.display())))
    }
}

fn prepare_out(dir: &Path) -> Res<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("{}: {e}", dir.display())))
}

fn kv(k: &str, v: impl ToString) -> (String, String) {
    (k.to_string(), v.to_string())
}

/// Command name, inputs, the resolved config, then command-specific facts.
fn write_manifest(
    dir: &Path,
    command: &str,
    inputs: &[(&str, &Path)],
    cfg: &RunConfig,
    facts: Vec<(String, String)>,
) -> Res<()> {
    let mut pairs = vec![
        kv("command", command),
        kv("version", env!("CARGO_PKG_VERSION")),
    ];
    pairs.extend(inputs.iter().map(|(k, p)| kv(k, p.display())));
    pairs.extend(cfg.to_key_values());
    pairs.extend(facts);
    Ok(write_key_values(&dir.join(RUN_MANIFEST), &pairs)?)
}

/// Cloud ids become file names.
fn file_stem_for(id: &str) -> Res<&str> {
    if id.is_empty() || id.contains(['/', '\\']) || id == "." || id == ".." {
        return Err(CliError::format(format!(
            "cloud id `{id}` cannot be used as a file name"
        )));
    }
    Ok(id)
}

pub fn synth(cfg: &RunConfig, out: &Path) -> Res<()> {
    prepare_out(out)?;
    let archetypes = default_archetypes();
    let data = generate_dataset(&archetypes, &cfg.synth, cfg.seed)?;
    write_dataset(out, &data)?;
    // a config fragment that lets `match` place the census in the same frame
    let frame = vec![
        kv("post_x", data.frame.post_x),
        kv("post_y", data.frame.post_y),
        kv("top_k", archetypes.len()),
    ];
    write_key_values(&out.join(SYNTH_CONFIG), &frame)?;
    let facts = vec![
        kv("clouds", data.dataset.len()),
        kv("census_records", data.census.len()),
    ];
    write_manifest(out, "synth", &[], cfg, facts)?;
    println!(
        "wrote {} clouds ({} classes x {}) and {} census records to {}",
        data.dataset.len(),
        archetypes.len(),
        cfg.synth.per_class,
        data.census.len(),
        out.display()
    );
    println!(
        "plot frame for matching: --config {}",
        out.join(SYNTH_CONFIG).display()
    );
    Ok(())
}

pub fn match_labels(cfg: &RunConfig, manifest: &Path, census: &Path, out: &Path) -> Res<()> {
    require_file(manifest)?;
    require_file(census)?;
    prepare_out(out)?;
    let mut clouds = load_manifest_clouds(manifest)?;
    let records = read_census(census)?;
    let total_clouds = clouds.len();
    if cfg.filter_stage == FilterStage::BeforeMatch {
        clouds = filter_min_points(&clouds, cfg.min_points);
    }
    let result = match_by_rounding(&clouds, &records, &cfg.frame, &cfg.matching)?;

    let sizes: HashMap<&str, usize> = clouds.iter().map(|c| (c.id.as_str(), c.len())).collect();
    let species: HashMap<&str, &str> = records
        .iter()
        .map(|r| (r.tag.as_str(), r.species.as_str()))
        .collect();
    let kept: Vec<&(String, String)> = result
        .pairs
        .iter()
        .filter(|(cloud, _)| sizes[cloud.as_str()] > cfg.min_points)
        .collect();
    let filtered = match cfg.filter_stage {
        FilterStage::BeforeMatch => total_clouds - clouds.len(),
        FilterStage::AfterMatch => result.pairs.len() - kept.len(),
    };
    let dictionary = group_species(kept.iter().map(|(_, tag)| species[tag.as_str()]), cfg.top_k)?;
    let rows: Vec<MatchReportRow> = kept
        .iter()
        .map(|(cloud, tag)| {
            let class_index = dictionary
                .index_of(species[tag.as_str()])
                .expect("an open dictionary covers every species");
            MatchReportRow {
                cloud_id: cloud.clone(),
                census_tag: tag.clone(),
                class_index,
                class_name: dictionary.name(class_index).unwrap_or_default().to_string(),
            }
        })
        .collect();
    write_match_report(&out.join(MATCHES_FILE), &rows)?;
    write_key_values(&out.join(CLASSES_FILE), &class_key_values(&dictionary))?;

    let facts = vec![
        kv("match_rate", result.match_rate),
        kv("pairs", result.pairs.len()),
        kv("ambiguous_cells", result.ambiguous_cells),
        kv("unmatched_clouds", result.unmatched_clouds),
        kv("unmatched_records", result.unmatched_records),
        kv("filtered_min_points", filtered),
        kv("labeled", rows.len()),
    ];
    for (k, v) in &facts {
        println!("{k}: {v}");
    }
    println!("classes: {}", dictionary.class_names().join(", "));
    println!("cells holding several clouds or stems are left unlabeled");
    write_manifest(
        out,
        "match",
        &[("manifest", manifest), ("census", census)],
        cfg,
        facts,
    )
}

pub fn project(cfg: &RunConfig, manifest: &Path, out: &Path) -> Res<()> {
    require_file(manifest)?;
    prepare_out(out)?;
    let clouds = load_manifest_clouds(manifest)?;
    let prep = Preprocessor::fit(
        cfg.height_rescale(),
        InputSpec::Views(cfg.raster),
        &clouds,
        cfg.seed,
    )?;
    let pgm_dir = out.join("pgm");
    if cfg.pgm {
        prepare_out(&pgm_dir)?;
    }
    let mut index = Vec::with_capacity(clouds.len());
    let mut clipped_clouds = 0;
    for cloud in &clouds {
        let stem = file_stem_for(&cloud.id)?;
        let ps = project6(&prep.normalize(cloud)?, &cfg.raster)?;
        let file = format!("{stem}.pctr");
        write_pctr(&ps, &cfg.raster, &out.join(&file))?;
        if cfg.pgm {
            for view in View::ALL {
                write_pgm(
                    ps.view(view),
                    &pgm_dir.join(format!("{stem}_{}.pgm", view.name())),
                )?;
            }
        }
        clipped_clouds += usize::from(ps.clipped > 0);
        index.push(vec![cloud.id.clone(), file, ps.clipped.to_string()]);
    }
    write_rows(&out.join("index.csv"), &["id", "file", "clipped"], index)?;
    let mut facts = prep.to_key_values();
    facts.push(kv("clouds", clouds.len()));
    facts.push(kv("clouds_with_clipping", clipped_clouds));
    println!(
        "projected {} clouds at {}x{} ({} with out-of-window points clamped)",
        clouds.len(),
        cfg.raster.res,
        cfg.raster.res,
        clipped_clouds
    );
    write_manifest(out, "project", &[("manifest", manifest)], cfg, facts)
}

fn labels_files(labels: &Path) -> (PathBuf, PathBuf) {
    (labels.join(MATCHES_FILE), labels.join(CLASSES_FILE))
}

/// Clouds from a manifest joined with the labels written by `match`.
fn load_labeled(manifest: &Path, labels: &Path) -> Res<LabeledDataset> {
    let (matches, classes) = labels_files(labels);
    let dictionary = dictionary_from_key_values(&read_key_values(&classes)?)?;
    let rows = read_match_report(&matches)?;
    let mut clouds: HashMap<String, PointCloud> = load_manifest_clouds(manifest)?
        .into_iter()
        .map(|c| (c.id.clone(), c))
        .collect();
    let mut items = Vec::with_capacity(rows.len());
    for row in rows {
        if dictionary.name(row.class_index) != Some(row.class_name.as_str()) {
            return Err(CliError::format(format!(
                "{}: class {} of `{}` is `{}` in {}",
                matches.display(),
                row.class_index,
                row.cloud_id,
                dictionary.name(row.class_index).unwrap_or("<none>"),
                classes.display()
            )));
        }
        let cloud = clouds.remove(&row.cloud_id).ok_or_else(|| {
            CliError::format(format!(
                "{}: cloud `{}` is not in {}",
                matches.display(),
                row.cloud_id,
                manifest.display()
            ))
        })?;
        items.push(LabeledItem {
            cloud,
            label: row.class_index,
        });
    }
    Ok(LabeledDataset::new(items, dictionary)?)
}

fn split_note(cfg: &RunConfig) -> String {
    format!(
        "split: stratified {:.2}/{:.2} per class, seed {} (the split protocol is a local choice)",
        cfg.split_fraction,
        1.0 - cfg.split_fraction,
        cfg.seed
    )
}

pub fn train(cfg: &RunConfig, manifest: &Path, labels: &Path, out: &Path) -> Res<()> {
    require_file(manifest)?;
    let (matches, classes) = labels_files(labels);
    require_file(&matches)?;
    require_file(&classes)?;
    let tc = cfg.train_config();
    tc.validate()?;
    prepare_out(out)?;

    let ds = load_labeled(manifest, labels)?;
    let (train_set, test_set) = stratified_split(&ds, tc.split_fraction, tc.seed)?;
    eprintln!(
        "training {} on {} clouds, testing on {} ({} classes)",
        tc.model.label(),
        train_set.len(),
        test_set.len(),
        ds.num_classes()
    );
    let outcome = train_model(&tc, &train_set, &test_set, |r| {
        eprintln!(
            "epoch {:>3}  loss {:.4}  accuracy {:.3}  auc {}  {:.1} s",
            r.epoch,
            r.loss,
            r.report.overall_accuracy,
            r.report
                .auc_macro_ovr
                .map_or("-".into(), |a| format!("{a:.3}")),
            r.seconds
        );
        true
    })?;

    outcome.save(&out.join(MODEL_DIR))?;
    write_metrics(&out.join(METRICS_FILE), &outcome.history, false)?;
    write_timing(&out.join(TIMING_FILE), &outcome.history)?;
    let split_rows = ds.items().iter().map(|item| {
        let in_test = test_set.items().iter().any(|t| t.cloud.id == item.cloud.id);
        vec![
            item.cloud.id.clone(),
            if in_test { "test" } else { "train" }.to_string(),
        ]
    });
    write_rows(&out.join(SPLIT_FILE), &["cloud_id", "set"], split_rows)?;
    let report = format_report(&[(tc.model, outcome.final_report())], &split_note(cfg));
    fs::write(out.join(REPORT_FILE), &report)
        .map_err(|e| CliError::io(format!("{}: {e}", out.display())))?;
    print!("{report}");

    let facts = vec![
        kv("train_items", train_set.len()),
        kv("test_items", test_set.len()),
        kv("epochs_run", outcome.history.len()),
    ];
    write_manifest(
        out,
        "train",
        &[("manifest", manifest), ("labels", labels)],
        cfg,
        facts,
    )
}

fn read_csv_column(path: &Path, column: usize) -> Res<Vec<(String, String)>> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| {
            let mut parts = l.split(',');
            let key = parts.next().unwrap_or_default().to_string();
            let value = parts
                .nth(column - 1)
                .ok_or_else(|| CliError::format(format!("{}: short row `{l}`", path.display())))?;
            Ok((key, value.to_string()))
        })
        .collect()
}

struct LoadedRun {
    kind: ModelKind,
    model: Model,
    preprocessor: Preprocessor,
    dictionary: ClassDictionary,
}

fn load_run(run: &Path) -> Res<LoadedRun> {
    let dir = run.join(MODEL_DIR);
    require_file(&dir.join(DESCRIPTION_FILE))?;
    let (model, kv) = Model::load(&dir)?;
    let kind = kv
        .iter()
        .rev()
        .find(|(k, _)| k == "model")
        .ok_or_else(|| CliError::format(format!("{}: no model kind recorded", dir.display())))?
        .1
        .parse()?;
    let preprocessor = Preprocessor::from_key_values(model.arch(), &kv)?;
    let dictionary = dictionary_from_key_values(&kv)?;
    Ok(LoadedRun {
        kind,
        model,
        preprocessor,
        dictionary,
    })
}

pub fn eval(
    cfg: &RunConfig,
    runs: &[PathBuf],
    manifest: &Path,
    labels: &Path,
    all: bool,
    out: &Path,
) -> Res<()> {
    require_file(manifest)?;
    for run in runs {
        require_file(&run.join(MODEL_DIR).join(DESCRIPTION_FILE))?;
        if !all {
            require_file(&run.join(SPLIT_FILE))?;
        }
    }
    prepare_out(out)?;
    let ds = load_labeled(manifest, labels)?;
    let mut reports: Vec<(ModelKind, EvalReport)> = Vec::new();
    let mut rows = Vec::new();
    for run in runs {
        let mut loaded = load_run(run)?;
        if reports.iter().any(|(k, _)| *k == loaded.kind) {
            return Err(CliError::config(format!(
                "two runs of {} given",
                loaded.kind
            )));
        }
        if loaded.dictionary != *ds.dictionary() {
            return Err(CliError::config(format!(
                "{} was trained on classes [{}], the labels have [{}]",
                run.display(),
                loaded.dictionary.class_names().join(", "),
                ds.dictionary().class_names().join(", ")
            )));
        }
        let items: Vec<&LabeledItem> = if all {
            ds.items().iter().collect()
        } else {
            let test: HashSet<String> = read_csv_column(&run.join(SPLIT_FILE), 1)?
                .into_iter()
                .filter(|(_, set)| set == "test")
                .map(|(id, _)| id)
                .collect();
            ds.items()
                .iter()
                .filter(|i| test.contains(&i.cloud.id))
                .collect()
        };
        if items.is_empty() {
            return Err(CliError::format(format!(
                "no labeled clouds to evaluate for {}",
                run.display()
            )));
        }
        let clouds: Vec<PointCloud> = items.iter().map(|i| i.cloud.clone()).collect();
        let labels: Vec<usize> = items.iter().map(|i| i.label).collect();
        let x = loaded.preprocessor.encode(&clouds)?;
        let mut report = evaluate(&mut loaded.model, &x, &labels)?;
        let timing = run.join(TIMING_FILE);
        if timing.is_file() {
            report.wall_time = read_csv_column(&timing, 1)?
                .iter()
                .map(|(_, s)| s.parse::<f64>().unwrap_or(0.0))
                .sum();
        }
        rows.push(vec![
            loaded.kind.to_string(),
            report
                .auc_macro_ovr
                .map_or(String::new(), |a| a.to_string()),
            report.overall_accuracy.to_string(),
            items.len().to_string(),
        ]);
        reports.push((loaded.kind, report));
    }
    let measured: Vec<(ModelKind, &EvalReport)> = reports.iter().map(|(k, r)| (*k, r)).collect();
    let note = if all {
        "evaluated on every labeled cloud".to_string()
    } else {
        "evaluated on each run's held-out test clouds".to_string()
    };
    let table = format_report(&measured, &note);
    print!("{table}");
    fs::write(out.join(REPORT_FILE), &table)
        .map_err(|e| CliError::io(format!("{}: {e}", out.display())))?;
    write_rows(
        &out.join("eval.csv"),
        &["model", "auc_macro_ovr", "overall_accuracy", "items"],
        rows,
    )?;
    let mut inputs: Vec<(&str, &Path)> = vec![("manifest", manifest), ("labels", labels)];
    inputs.extend(runs.iter().map(|r| ("run", r.as_path())));
    write_manifest(
        out,
        "eval",
        &inputs,
        cfg,
        vec![kv("scope", if all { "all" } else { "test" })],
    )
}

pub fn predict(cfg: &RunConfig, run: &Path, manifest: &Path, out: &Path) -> Res<()> {
    require_file(manifest)?;
    require_file(&run.join(MODEL_DIR).join(DESCRIPTION_FILE))?;
    prepare_out(out)?;
    let mut loaded = load_run(run)?;
    let clouds = load_manifest_clouds(manifest)?;
    let x = loaded.preprocessor.encode(&clouds)?;
    let probs = predict_probabilities(&mut loaded.model, &x)?;
    let preds: Vec<Prediction> = clouds
        .iter()
        .zip(&probs)
        .map(|(c, p)| Prediction {
            cloud_id: c.id.clone(),
            class_index: argmax(p),
            probabilities: p.iter().map(|&v| v as f32).collect(),
        })
        .collect();
    write_predictions(
        &out.join(PREDICTIONS_FILE),
        loaded.dictionary.class_names(),
        &preds,
    )?;
    println!(
        "predicted {} clouds with {} into {}",
        preds.len(),
        loaded.kind.label(),
        out.join(PREDICTIONS_FILE).display()
    );
    write_manifest(
        out,
        "predict",
        &[("run", run), ("manifest", manifest)],
        cfg,
        vec![kv("clouds", preds.len())],
    )
}

/// Manifest name inside a `synth` output directory.
pub fn synth_manifest(dir: &Path) -> PathBuf {
    dir.join(MANIFEST_FILE)
}

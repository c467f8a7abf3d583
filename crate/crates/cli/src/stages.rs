//! The pipeline stages. Each one reads its upstream checkpoints from the
//! output root and writes its own run directory.

use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2, Axis};
use serde_json::{json, Value};
use symflow::algebra::{analyze, is_abelian};
use symflow::data::{
    filter_classes, load_idx_images, load_idx_labels, pixel_stats, split, synth_dataset, Dataset, TargetEncoding,
};
use symflow::field::VectorField;
use symflow::flow::{frame_indices, integrate_streamline, max_drift, trace_likelihood, two_sided_frames, write_trajectory_csv};
use symflow::image::{filmstrip, stack, GrayImage};
use symflow::latent::{platonic_centers, train_autoencoder, Autoencoder, LatentDataset};
use symflow::oracle::{accuracy, analytic_oracle, train_classifier, Oracle, OutputHead};
use symflow::symmetry::{train_generators, GeneratorSet};

use crate::config::{DatasetSpec, ExperimentConfig, MnistSpec, Recipe};
use crate::rundir::{require, CliError, CliResult, Layout, RunDir};

/// Train and held-out data for one configuration.
pub struct Data {
    pub train: Dataset,
    pub test: Dataset,
    /// `(rows, cols)` for image data.
    pub image_shape: Option<(usize, usize)>,
    /// Sorted class labels present after filtering.
    pub classes: Vec<usize>,
}

fn mnist_file(dir: &Path, stem: &str) -> PathBuf {
    let plain = dir.join(stem);
    let gz = dir.join(format!("{stem}.gz"));
    if !plain.exists() && gz.exists() {
        gz
    } else {
        plain
    }
}

fn load_mnist(spec: &MnistSpec, seed: u64) -> CliResult<Data> {
    let images = load_idx_images(mnist_file(&spec.dir, "train-images-idx3-ubyte"))?;
    let labels = load_idx_labels(mnist_file(&spec.dir, "train-labels-idx1-ubyte"))?;
    let full = Dataset::from_idx(&images, &labels)?;
    let kept = if spec.classes.is_empty() {
        full
    } else {
        filter_classes(&full, &spec.classes)?
    };
    let (mut train, mut test) = split(&kept, spec.split, seed)?;
    if let Some(n) = spec.train_count {
        train = train.subsample(n, seed);
    }
    if let Some(n) = spec.test_count {
        test = test.subsample(n, seed.wrapping_add(1));
    }
    Ok(Data {
        classes: kept.classes(),
        train,
        test,
        image_shape: Some((images.rows, images.cols)),
    })
}

pub fn load_data(cfg: &ExperimentConfig) -> CliResult<Data> {
    match &cfg.dataset {
        DatasetSpec::Mnist(spec) => load_mnist(spec, cfg.seed),
        DatasetSpec::Synthetic(spec) => {
            let width = analytic_oracle(&spec.oracle)?.input_width();
            let train = synth_dataset(&spec.oracle, width, spec.train_count, spec.sampling, cfg.seed)?;
            let test = synth_dataset(&spec.oracle, width, spec.eval_count, spec.sampling, cfg.seed.wrapping_add(1))?;
            Ok(Data {
                train,
                test,
                image_shape: None,
                classes: Vec::new(),
            })
        }
    }
}

fn image_shape(data: &Data, stage: &str) -> CliResult<(usize, usize)> {
    data.image_shape
        .ok_or_else(|| CliError::input(format!("{stage} needs an image dataset, not synthetic points")))
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn write_table(run: &RunDir, name: &str, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> CliResult<()> {
    let mut text = header.join(",");
    text.push('\n');
    for r in rows {
        text.push_str(&r.join(","));
        text.push('\n');
    }
    run.write(name, text)
}

fn columns(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

fn write_points(run: &RunDir, name: &str, points: ArrayView2<f64>, labels: Option<&[usize]>) -> CliResult<()> {
    let mut header = columns("z", points.ncols());
    if labels.is_some() {
        header.push("label".into());
    }
    let rows = points.rows().into_iter().enumerate().map(|(i, r)| {
        let mut row: Vec<String> = r.iter().map(|&v| fmt(v)).collect();
        if let Some(l) = labels {
            row.push(l[i].to_string());
        }
        row
    });
    write_table(run, name, &header, rows)
}

/// Regular grid over the bounding box of 2D `points`, padded by 10%.
fn grid_2d(points: ArrayView2<f64>, per_side: usize) -> Array2<f64> {
    let lo = points.fold_axis(Axis(0), f64::INFINITY, |a, &b| a.min(b));
    let hi = points.fold_axis(Axis(0), f64::NEG_INFINITY, |a, &b| a.max(b));
    let pad = (&hi - &lo) * 0.1;
    let (lo, hi) = (&lo - &pad, &hi + &pad);
    let step = (&hi - &lo) / (per_side - 1) as f64;
    Array2::from_shape_fn((per_side * per_side, 2), |(k, j)| {
        let i = if j == 0 { k % per_side } else { k / per_side };
        lo[j] + step[j] * i as f64
    })
}

fn load_autoencoder(layout: &Layout, run: &mut RunDir) -> CliResult<Autoencoder> {
    let dir = layout.autoencoder_dir();
    require(&dir.join("manifest.json"), "train-ae")?;
    run.input_dir(&dir)?;
    Ok(Autoencoder::load(&dir)?)
}

fn load_classifier(layout: &Layout, run: &mut RunDir) -> CliResult<Oracle> {
    let path = layout.classifier_path();
    require(&path, "train-classifier")?;
    run.input(&path)?;
    let text = std::fs::read_to_string(&path)?;
    Ok(Oracle::from_checkpoint(&text)?)
}

fn load_generators(layout: &Layout, stage: &str, run: &mut RunDir) -> CliResult<GeneratorSet> {
    let dir = layout.generators_dir(stage);
    require(&dir.join("manifest.json"), "find-generators")?;
    run.input_dir(&dir)?;
    Ok(GeneratorSet::load(&dir)?)
}

fn check_latent_dim(cfg: &ExperimentConfig, ae: &Autoencoder) -> CliResult<()> {
    if ae.latent_dim() != cfg.latent_dim {
        return Err(CliError::shape(format!(
            "autoencoder checkpoint has latent dimension {}, config asks for {}",
            ae.latent_dim(),
            cfg.latent_dim
        )));
    }
    Ok(())
}

fn check_oracle(ae: &Autoencoder, oracle: &Oracle) -> CliResult<()> {
    if oracle.input_width() != ae.latent_dim() {
        return Err(CliError::shape(format!(
            "classifier takes width {}, autoencoder latent dimension is {}",
            oracle.input_width(),
            ae.latent_dim()
        )));
    }
    Ok(())
}

/// The conserved map and the latent (or synthetic) points it is studied on.
struct Study {
    oracle: Oracle,
    train: Array2<f64>,
    test: LatentDataset,
    train_latent: Option<LatentDataset>,
    autoencoder: Option<Autoencoder>,
}

fn study(cfg: &ExperimentConfig, layout: &Layout, data: &Data, run: &mut RunDir) -> CliResult<Study> {
    match &cfg.dataset {
        DatasetSpec::Synthetic(spec) => Ok(Study {
            oracle: analytic_oracle(&spec.oracle)?,
            train: data.train.features().clone(),
            test: LatentDataset {
                latents: data.test.features().clone(),
                targets: data.test.targets().clone(),
                class_labels: None,
            },
            train_latent: None,
            autoencoder: None,
        }),
        DatasetSpec::Mnist(_) => {
            let ae = load_autoencoder(layout, run)?;
            let oracle = load_classifier(layout, run)?;
            check_latent_dim(cfg, &ae)?;
            check_oracle(&ae, &oracle)?;
            let train_latent = ae.encode(&data.train)?;
            Ok(Study {
                oracle,
                train: train_latent.latents.clone(),
                test: ae.encode(&data.test)?,
                train_latent: Some(train_latent),
                autoencoder: Some(ae),
            })
        }
    }
}

pub fn pixstats(cfg: &ExperimentConfig, layout: &Layout) -> CliResult<Value> {
    let data = load_data(cfg)?;
    let run = RunDir::create(layout, "pixstats", cfg)?;
    let stats = pixel_stats(&data.train)?;
    let header = ["feature", "max", "mean"].map(String::from);
    let rows = (0..stats.max_map.len()).map(|i| vec![i.to_string(), fmt(stats.max_map[i]), fmt(stats.mean_map[i])]);
    write_table(&run, "pixstats.csv", &header, rows)?;
    let mut summary = json!({
        "samples": data.train.sample_count(),
        "features": data.train.feature_width(),
        "features_with_zero_max": stats.max_map.iter().filter(|&&v| v == 0.0).count(),
    });
    if let Some((rows, cols)) = data.image_shape {
        GrayImage::new(rows, cols, stats.max_map.view())?.write_pgm(&run.file("max_map.pgm"))?;
        GrayImage::new(rows, cols, stats.mean_map.view())?.write_pgm(&run.file("mean_map.pgm"))?;
        let corners = [0, cols - 1, (rows - 1) * cols, rows * cols - 1];
        summary["corner_max"] = corners.iter().map(|&i| stats.max_map[i]).collect();
    }
    run.finish(summary)
}

pub fn train_ae(cfg: &ExperimentConfig, layout: &Layout) -> CliResult<Value> {
    let data = load_data(cfg)?;
    let (rows, cols) = image_shape(&data, "train-ae")?;
    let run = RunDir::create(layout, Layout::AUTOENCODER, cfg)?;
    let (ae, report) = train_autoencoder(&data.train, cfg.latent_dim, &cfg.autoencoder.arch, &cfg.autoencoder.train)?;
    ae.save(&layout.autoencoder_dir())?;

    let train = ae.encode(&data.train)?;
    let test = ae.encode(&data.test)?;
    write_points(&run, "latents_train.csv", train.latents.view(), train.class_labels.as_deref())?;
    write_points(&run, "latents_test.csv", test.latents.view(), test.class_labels.as_deref())?;
    let centers = platonic_centers(&train, &data.classes)?;
    let mut header = vec!["class".to_string()];
    header.extend(columns("z", cfg.latent_dim));
    let center_rows = data.classes.iter().zip(centers.rows()).map(|(c, r)| {
        let mut row = vec![c.to_string()];
        row.extend(r.iter().map(|&v| fmt(v)));
        row
    });
    write_table(&run, "centers.csv", &header, center_rows)?;
    let losses = report.epoch_losses.iter().enumerate().map(|(e, l)| vec![e.to_string(), fmt(*l)]);
    write_table(&run, "training_log.csv", &["epoch".into(), "mse".into()], losses)?;

    // originals over reconstructions for the first few held-out images
    let shown = data.test.sample_count().min(8);
    let idx: Vec<usize> = (0..shown).collect();
    let originals = data.test.select(&idx);
    let decoded = ae.decode(test.latents.select(Axis(0), &idx).view())?;
    let to_images = |m: &Array2<f64>| -> CliResult<Vec<GrayImage>> {
        m.rows().into_iter().map(|r| Ok(GrayImage::new(rows, cols, r)?)).collect()
    };
    if shown > 0 {
        let top = filmstrip(&to_images(originals.features())?)?;
        let bottom = filmstrip(&to_images(&decoded)?)?;
        stack(&[top, bottom])?.write_pgm(&run.file("reconstructions.pgm"))?;
    }
    for (i, c) in centers.rows().into_iter().enumerate() {
        let img = ae.decode(c.insert_axis(Axis(0)))?;
        GrayImage::new(rows, cols, img.row(0))?.write_pgm(&run.file(&format!("center_{}.pgm", data.classes[i])))?;
    }

    run.finish(json!({
        "latent_dim": cfg.latent_dim,
        "train_samples": data.train.sample_count(),
        "test_samples": data.test.sample_count(),
        "final_train_mse": report.final_mse,
        "test_mse": ae.reconstruction_mse(data.test.features().view())?,
        "warnings": report.warnings,
    }))
}

fn class_targets(dataset: &Dataset, classes: &[usize], head: OutputHead) -> CliResult<Dataset> {
    let encoding = match head {
        OutputHead::Sigmoid => TargetEncoding::Binary,
        _ => TargetEncoding::OneHot,
    };
    Ok(dataset.with_class_targets(classes, encoding)?)
}

pub fn train_classifier_stage(cfg: &ExperimentConfig, layout: &Layout) -> CliResult<Value> {
    let mut run = RunDir::create(layout, Layout::CLASSIFIER, cfg)?;
    let ae = load_autoencoder(layout, &mut run)?;
    check_latent_dim(cfg, &ae)?;
    let data = load_data(cfg)?;
    image_shape(&data, "train-classifier")?;
    let head = cfg.classifier.arch.head;
    let train = class_targets(&ae.encode(&data.train)?.to_dataset()?, &data.classes, head)?;
    let test = class_targets(&ae.encode(&data.test)?.to_dataset()?, &data.classes, head)?;
    let oracle = train_classifier(&train, &data.classes, &cfg.classifier.arch, &cfg.classifier.train)?;
    run.write("classifier.json", oracle.to_checkpoint()?)?;

    if cfg.latent_dim == 2 {
        let grid = grid_2d(train.features().view(), 41);
        let p = oracle.evaluate(grid.view())?;
        let mut header = columns("z", 2);
        header.extend(columns("p", p.ncols()));
        let rows = grid.rows().into_iter().zip(p.rows()).map(|(z, q)| z.iter().chain(q.iter()).map(|&v| fmt(v)).collect());
        write_table(&run, "likelihood_grid.csv", &header, rows)?;
    }
    run.finish(json!({
        "classes": data.classes,
        "output_head": head,
        "train_accuracy": accuracy(&oracle, &train)?,
        "test_accuracy": accuracy(&oracle, &test)?,
        "oracle_ref": oracle.reference(),
    }))
}

fn field_table(run: &RunDir, name: &str, set: &GeneratorSet, points: ArrayView2<f64>) -> CliResult<()> {
    let values = set.fields().iter().map(|f| f.eval(points)).collect::<Result<Vec<_>, _>>()?;
    let mut header = columns("z", points.ncols());
    for a in 0..set.len() {
        header.extend(columns(&format!("g{a}_"), points.ncols()));
    }
    let rows = (0..points.nrows()).map(|i| {
        let mut row: Vec<String> = points.row(i).iter().map(|&v| fmt(v)).collect();
        for v in &values {
            row.extend(v.row(i).iter().map(|&x| fmt(x)));
        }
        row
    });
    write_table(run, name, &header, rows)
}

pub fn find_generators(cfg: &ExperimentConfig, layout: &Layout, stage: &str) -> CliResult<Value> {
    let mut run = RunDir::create(layout, stage, cfg)?;
    let data = load_data(cfg)?;
    let s = study(cfg, layout, &data, &mut run)?;
    let set = train_generators(&s.oracle, s.train.view(), cfg.generators.count, &cfg.generators.training)?;
    set.save(&layout.generators_dir(stage))?;
    let mut log = Vec::new();
    set.write_log_csv(&mut log)?;
    run.write("training_log.csv", log)?;
    field_table(&run, "field.csv", &set, s.test.latents.view())?;
    if s.train.ncols() == 2 {
        field_table(&run, "field_grid.csv", &set, grid_2d(s.train.view(), 21).view())?;
    }
    let last = set.final_losses().expect("trained set has final losses");
    run.finish(json!({
        "generators": set.len(),
        "epochs": set.training_log().len(),
        "oracle_ref": set.oracle_ref(),
        "final": {"L_inv": last.inv, "L_norm": last.norm, "L_ortho": last.ortho, "total": last.total},
    }))
}

pub fn closure(cfg: &ExperimentConfig, layout: &Layout) -> CliResult<Value> {
    let mut run = RunDir::create(layout, "closure", cfg)?;
    let set = load_generators(layout, Layout::GENERATORS, &mut run)?;
    let data = load_data(cfg)?;
    let points = match &cfg.dataset {
        DatasetSpec::Synthetic(_) => data.test.features().clone(),
        DatasetSpec::Mnist(_) => {
            let ae = load_autoencoder(layout, &mut run)?;
            ae.encode(&data.test)?.latents
        }
    };
    let take = cfg.closure.points.min(points.nrows());
    let points = points.slice(ndarray::s![..take, ..]).to_owned();
    if points.ncols() != set.dim() {
        return Err(CliError::shape(format!(
            "generators act on dimension {}, evaluation points have width {}",
            set.dim(),
            points.ncols()
        )));
    }
    let sc = analyze(&set.fields(), points.view())?;
    let mut csv = Vec::new();
    sc.write_csv(&mut csv)?;
    run.write("structure_constants.csv", csv)?;
    let report = sc.report(cfg.closure.tolerance, cfg.closure.abelian_tolerance);
    run.write("closure_report.txt", &report)?;
    run.finish(json!({
        "generators": set.len(),
        "points": take,
        "residuals": sc.residuals(),
        "bracket_magnitudes": sc.bracket_magnitudes(),
        "max_residual": sc.max_residual(),
        "closed": sc.max_residual() < cfg.closure.tolerance,
        "abelian": is_abelian(&sc, cfg.closure.abelian_tolerance),
    }))
}

/// Probability the head assigns to output index `k`.
fn class_probability(outputs: ArrayView2<f64>, row: usize, k: usize) -> f64 {
    if outputs.ncols() == 1 {
        let p = outputs[(row, 0)];
        if k == 1 {
            p
        } else {
            1.0 - p
        }
    } else {
        outputs[(row, k)]
    }
}

pub fn flow(cfg: &ExperimentConfig, layout: &Layout) -> CliResult<Value> {
    let mut run = RunDir::create(layout, "flow", cfg)?;
    let set = load_generators(layout, Layout::GENERATORS, &mut run)?;
    let data = load_data(cfg)?;
    let s = study(cfg, layout, &data, &mut run)?;
    if s.train.ncols() != set.dim() {
        return Err(CliError::shape(format!(
            "generators act on dimension {}, latent points have width {}",
            set.dim(),
            s.train.ncols()
        )));
    }
    let fc = &cfg.flow;
    let (starts, labels): (Array2<f64>, Vec<Option<usize>>) = match &s.train_latent {
        Some(latent) => (
            platonic_centers(latent, &data.classes)?,
            data.classes.iter().map(|&c| Some(c)).collect(),
        ),
        None if !fc.starts.is_empty() => {
            let dim = set.dim();
            if fc.starts.iter().any(|p| p.len() != dim) {
                return Err(CliError::shape(format!("flow start points must have width {dim}")));
            }
            let flat: Vec<f64> = fc.starts.iter().flatten().copied().collect();
            (Array2::from_shape_vec((fc.starts.len(), dim), flat).expect("checked widths"), vec![None; fc.starts.len()])
        }
        None => {
            let n = s.test.latents.nrows().min(3);
            (s.test.latents.slice(ndarray::s![..n, ..]).to_owned(), vec![None; n])
        }
    };

    let mut records = Vec::new();
    for (a, g) in set.generators().iter().enumerate() {
        let mut strips = Vec::new();
        for (i, start) in starts.rows().into_iter().enumerate() {
            let tag = match labels[i] {
                Some(c) => format!("c{c}_g{a}"),
                None => format!("s{i}_g{a}"),
            };
            let fwd = integrate_streamline(g, a, start, fc.epsilon, fc.steps)?;
            let bwd = integrate_streamline(g, a, start, -fc.epsilon, fc.steps)?;
            let pf = trace_likelihood(&s.oracle, &fwd)?;
            let pb = trace_likelihood(&s.oracle, &bwd)?;
            for (traj, p, dir) in [(&fwd, &pf, "fwd"), (&bwd, &pb, "bwd")] {
                let mut csv = Vec::new();
                write_trajectory_csv(traj, Some(p), &mut csv)?;
                run.write(&format!("trajectory_{tag}_{dir}.csv"), csv)?;
            }
            let mut record = json!({
                "generator": a,
                "start": start.to_vec(),
                "max_drift": max_drift(&pf).max(max_drift(&pb)),
            });
            if let (Some(class), Some(ae)) = (labels[i], &s.autoencoder) {
                let k = data.classes.iter().position(|&c| c == class).expect("class from data");
                let frames = frame_indices(&fwd, fc.stride)?;
                let mut own = Vec::new();
                let mut predicted = Vec::new();
                for &t in frames.iter().rev() {
                    own.push(class_probability(pb.view(), t, k));
                    predicted.push(data.classes[Oracle::predicted_index(pb.slice(ndarray::s![t..t + 1, ..]))[0]]);
                }
                for &t in frames.iter().skip(1) {
                    own.push(class_probability(pf.view(), t, k));
                    predicted.push(data.classes[Oracle::predicted_index(pf.slice(ndarray::s![t..t + 1, ..]))[0]]);
                }
                record["class"] = json!(class);
                record["frame_steps"] = json!(frames);
                record["frame_own_probability"] = json!(own);
                record["frame_predicted"] = json!(predicted);
                record["min_own_probability"] = json!(own.iter().copied().fold(1.0, f64::min));
                let shape = data.image_shape.expect("image data");
                let images = two_sided_frames(ae.decoder(), &bwd, &fwd, fc.stride, shape)?;
                let strip = filmstrip(&images)?;
                strip.write_pgm(&run.file(&format!("filmstrip_{tag}.pgm")))?;
                strips.push(strip);
            }
            records.push(record);
        }
        if !strips.is_empty() {
            stack(&strips)?.write_pgm(&run.file(&format!("grid_g{a}.pgm")))?;
        }
    }
    run.finish(json!({
        "epsilon": fc.epsilon,
        "steps": fc.steps,
        "stride": fc.stride,
        "streamlines": records,
    }))
}

pub fn recipe(recipe: Recipe, base: &ExperimentConfig, desk: bool, seed: Option<u64>, layout: &Layout) -> CliResult<Value> {
    let mut cfg = recipe.config(base);
    if desk {
        cfg.desk();
    }
    if let Some(s) = seed {
        cfg.reseed(s);
    }
    std::fs::create_dir_all(layout.root())?;
    let mut stages = serde_json::Map::new();
    stages.insert(Layout::AUTOENCODER.into(), train_ae(&cfg, layout)?);
    stages.insert(Layout::CLASSIFIER.into(), train_classifier_stage(&cfg, layout)?);
    stages.insert(Layout::GENERATORS.into(), find_generators(&cfg, layout, Layout::GENERATORS)?);
    let mut extra = serde_json::Map::new();
    match recipe {
        Recipe::TwoDigitsTwoDims => {
            // a second generator has no room in two dimensions
            let mut two = cfg.clone();
            two.generators.count = 2;
            let ng2 = find_generators(&two, layout, "find-generators-ng2")?;
            let one_total = stages[Layout::GENERATORS]["final"]["total"].as_f64().unwrap_or(f64::NAN);
            let two_total = ng2["final"]["total"].as_f64().unwrap_or(f64::NAN);
            extra.insert("total_loss_ratio_ng2_over_ng1".into(), json!(two_total / one_total));
            stages.insert("find-generators-ng2".into(), ng2);
        }
        Recipe::TwoDigitsThreeDims => {
            stages.insert("closure".into(), closure(&cfg, layout)?);
        }
        Recipe::TenDigitsSixteenDims => {}
    }
    stages.insert("flow".into(), flow(&cfg, layout)?);
    let summary = json!({"recipe": recipe.name(), "stages": stages, "comparisons": extra});
    let mut text = serde_json::to_string_pretty(&summary).expect("json value serializes");
    text.push('\n');
    std::fs::write(layout.root().join("recipe_summary.json"), text)?;
    std::fs::write(layout.root().join("recipe_config.json"), cfg.to_json())?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn grid_covers_the_padded_box() {
        let g = grid_2d(array![[0.0, 0.0], [10.0, 20.0]].view(), 3);
        assert_eq!(g.nrows(), 9);
        assert_eq!(g.row(0), array![-1.0, -2.0]);
        assert_eq!(g.row(8), array![11.0, 22.0]);
        assert_eq!(g.row(1), array![5.0, -2.0]);
    }

    #[test]
    fn probabilities_of_either_head() {
        let sig = array![[0.8]];
        assert_eq!(class_probability(sig.view(), 0, 1), 0.8);
        assert!((class_probability(sig.view(), 0, 0) - 0.2).abs() < 1e-15);
        let soft = array![[0.1, 0.7, 0.2]];
        assert_eq!(class_probability(soft.view(), 0, 2), 0.2);
    }
}

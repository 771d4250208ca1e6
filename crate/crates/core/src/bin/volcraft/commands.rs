use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use chrono::NaiveDate;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use volcraft::arbitrage::{check_surface, ArbitrageSummary, DenseResolution, DEFAULT_TOLERANCE};
use volcraft::calibration::{
    calibrate_latent, mae_bps, run_masking_benchmark, write_benchmark, LatentCalibrationConfig,
};
use volcraft::datagen::{default_corpus_spec, generate_corpus, CorpusSpec};
use volcraft::heston::{
    heston_calibrate, heston_vols_at, initial_guess, HestonCalibrationConfig, HestonParams,
};
use volcraft::rng::substream;
use volcraft::surfaces::{
    quotes_to_smile, read_observations, read_quotes, read_surfaces, write_surfaces, GridSpec,
    VolSurface,
};
use volcraft::vae::{Architecture, DecoderKind, PenaltyWeights, TrainConfig, VaeModel};
use volcraft::VolError;

use crate::{
    BenchHestonArgs, BenchMaskArgs, CheckArbArgs, CliError, CompleteArgs, EncodeArgs, GenDataArgs,
    GenerateArgs, IngestArgs, InterpolateArgs, TrainArgs,
};

type CliResult = Result<(), CliError>;

/// Relative tolerance when snapping quoted tenors onto grid maturities.
const TENOR_SNAP: f64 = 5e-3;

fn open(path: &str) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|e| {
        CliError::Vol(VolError::Io(std::io::Error::new(
            e.kind(),
            format!("{path}: {e}"),
        )))
    })
}

fn create(path: &str) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| {
        CliError::Vol(VolError::Io(std::io::Error::new(
            e.kind(),
            format!("{path}: {e}"),
        )))
    })
}

fn write_json<T: Serialize>(path: Option<&str>, value: &T) -> CliResult {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => {
            let mut w = create(p)?;
            writeln!(w, "{text}")?;
            w.flush()?;
        }
        None => {
            let mut out = std::io::stdout().lock();
            match writeln!(out, "{text}").and_then(|_| out.flush()) {
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => {}
                other => other?,
            }
        }
    }
    Ok(())
}

fn load_model(path: &str) -> Result<VaeModel, CliError> {
    VaeModel::load(Path::new(path)).map_err(|e| match e {
        VolError::Io(io) => CliError::Vol(VolError::Io(std::io::Error::new(
            io.kind(),
            format!("{path}: {io}"),
        ))),
        other => CliError::Vol(other),
    })
}

fn load_surfaces(path: &str, grid: &GridSpec) -> Result<Vec<VolSurface>, CliError> {
    Ok(read_surfaces(open(path)?, grid)?)
}

fn parse_list<T: std::str::FromStr>(raw: &str, what: &str) -> Result<Vec<T>, CliError> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("{what}: cannot parse {s:?} in {raw:?}")))
        })
        .collect()
}

fn parse_point(raw: &str, dim: usize) -> Result<Vec<f64>, CliError> {
    let z: Vec<f64> = parse_list(raw, "latent point")?;
    if z.len() != dim {
        return Err(CliError::Usage(format!(
            "latent point {raw:?} has {} coordinates, model has {dim}",
            z.len()
        )));
    }
    Ok(z)
}

fn epoch_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid date")
}

#[derive(Serialize)]
struct SurfaceReport<'a> {
    asset_id: &'a str,
    date: String,
    #[serde(flatten)]
    arbitrage: ArbitrageSummary,
}

fn arbitrage_reports<'a>(
    surfaces: &'a [VolSurface],
    resolution: &DenseResolution,
    tol: f64,
) -> Result<Vec<SurfaceReport<'a>>, CliError> {
    let summaries: Vec<Result<ArbitrageSummary, VolError>> = surfaces
        .par_iter()
        .map(|s| check_surface(s, resolution, tol).map(|r| r.summary()))
        .collect();
    surfaces
        .iter()
        .zip(summaries)
        .map(|(s, r)| {
            Ok(SurfaceReport {
                asset_id: &s.asset_id,
                date: s.observation_date.to_string(),
                arbitrage: r?,
            })
        })
        .collect()
}

pub fn ingest(a: &IngestArgs) -> CliResult {
    let grid = GridSpec::default();
    let quotes = read_quotes(open(&a.quotes)?)?;
    let mut keys: Vec<(String, NaiveDate)> = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let n_d = grid.deltas().len();
    for q in &quotes {
        let t_idx = grid
            .maturities()
            .iter()
            .position(|&t| ((q.quote.tenor - t) / t).abs() <= TENOR_SNAP)
            .ok_or_else(|| {
                VolError::Mismatch(format!(
                    "{} {}: tenor {} is not a grid maturity",
                    q.asset_id, q.date, q.quote.tenor
                ))
            })?;
        let smile = quotes_to_smile(&q.quote)?;
        let key = (q.asset_id.clone(), q.date);
        let slot = match keys.iter().position(|k| *k == key) {
            Some(i) => i,
            None => {
                keys.push(key);
                rows.push(vec![f64::NAN; grid.len()]);
                keys.len() - 1
            }
        };
        for (j, &(delta, vol)) in smile.iter().enumerate() {
            if (grid.deltas()[j] - delta).abs() > 1e-12 {
                return Err(VolError::Mismatch("quote deltas do not match the grid".into()).into());
            }
            let idx = t_idx * n_d + j;
            if !rows[slot][idx].is_nan() {
                return Err(VolError::Mismatch(format!(
                    "{} {}: duplicate tenor {}",
                    q.asset_id, q.date, q.quote.tenor
                ))
                .into());
            }
            rows[slot][idx] = vol;
        }
    }
    let mut surfaces = Vec::with_capacity(keys.len());
    for ((asset, date), vols) in keys.into_iter().zip(rows) {
        if vols.iter().any(|v| v.is_nan()) {
            return Err(VolError::Mismatch(format!(
                "{asset} {date}: quotes do not cover every grid tenor"
            ))
            .into());
        }
        surfaces.push(VolSurface::from_flat(asset, date, grid.clone(), vols)?);
    }
    let mut w = create(&a.out)?;
    write_surfaces(&mut w, &surfaces)?;
    w.flush()?;
    Ok(())
}

pub fn gen_data(a: &GenDataArgs) -> CliResult {
    let spec: CorpusSpec = match &a.spec {
        Some(p) => serde_json::from_reader(open(p)?)?,
        None => default_corpus_spec(a.seed),
    };
    let corpus = generate_corpus(&spec)?;
    let dir = Path::new(&a.out_dir);
    fs::create_dir_all(dir)?;
    for (name, surfaces) in [
        ("train.csv", &corpus.train),
        ("validation.csv", &corpus.validation),
    ] {
        let mut w = create(dir.join(name).to_str().unwrap_or(name))?;
        write_surfaces(&mut w, surfaces)?;
        w.flush()?;
    }
    Ok(())
}

pub fn train(a: &TrainArgs) -> CliResult {
    let decoder_kind: DecoderKind = a.decoder.parse().map_err(|_| {
        CliError::Usage(format!(
            "--decoder must be grid or pointwise, got {:?}",
            a.decoder
        ))
    })?;
    let hidden: Vec<usize> = parse_list(&a.hidden, "--hidden")?;
    let penalties = (a.lambda_cal != 0.0 || a.lambda_but != 0.0).then_some(PenaltyWeights {
        calendar: a.lambda_cal,
        butterfly: a.lambda_but,
    });
    let config = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        beta: a.beta,
        seed: a.seed,
        architecture: Architecture {
            decoder_kind,
            latent_dim: a.latent_dim,
            hidden,
        },
        arbitrage_penalties: penalties,
        ..TrainConfig::default()
    };
    let corpus = load_surfaces(&a.surfaces, &GridSpec::default())?;
    let outcome = volcraft::vae::train(&corpus, &config)?;
    outcome.model.save(Path::new(&a.out))?;
    if let Some(path) = &a.trace {
        let mut w = csv::Writer::from_writer(create(path)?);
        let csv_err = |e: csv::Error| VolError::Numerical(e.to_string());
        w.write_record(["epoch", "loss", "reconstruction", "kl", "l_cal", "l_but"])
            .map_err(csv_err)?;
        for s in &outcome.trace {
            w.write_record([
                s.epoch.to_string(),
                s.loss.to_string(),
                s.reconstruction.to_string(),
                s.kl.to_string(),
                s.l_cal.to_string(),
                s.l_but.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
    }
    Ok(())
}

pub fn complete(a: &CompleteArgs) -> CliResult {
    let model = load_model(&a.model)?;
    let sets = read_observations(open(&a.observations)?)?;
    let config = LatentCalibrationConfig {
        starts: a.starts,
        seed: a.seed,
        ridge: a.ridge,
        ..LatentCalibrationConfig::default()
    };
    let resolution = DenseResolution::default();
    let fits: Vec<Result<_, VolError>> = sets
        .par_iter()
        .map(|set| {
            let fit = calibrate_latent(&model, &set.observations, &config)?;
            let surface =
                volcraft::calibration::complete_surface(&model, &fit.z, &set.asset_id, set.date)?;
            let arb = check_surface(&surface, &resolution, DEFAULT_TOLERANCE)?.summary();
            Ok((fit, surface, arb))
        })
        .collect();
    let mut surfaces = Vec::with_capacity(sets.len());
    let mut report = Vec::with_capacity(sets.len());
    for (set, r) in sets.iter().zip(fits) {
        let (fit, surface, arb) = r?;
        report.push(json!({
            "asset_id": set.asset_id,
            "date": set.date.to_string(),
            "observations": set.observations.len(),
            "z": fit.z,
            "objective": fit.objective_value,
            "iterations": fit.iterations,
            "converged": fit.converged,
            "arbitrage": arb,
        }));
        surfaces.push(surface);
    }
    let mut w = create(&a.out)?;
    write_surfaces(&mut w, &surfaces)?;
    w.flush()?;
    write_json(a.report.as_deref(), &report)
}

pub fn encode(a: &EncodeArgs) -> CliResult {
    let model = load_model(&a.model)?;
    let surfaces = load_surfaces(&a.surfaces, model.grid())?;
    let mut w = csv::Writer::from_writer(create(&a.out)?);
    let csv_err = |e: csv::Error| VolError::Numerical(e.to_string());
    let mut header = vec!["asset_id".to_string(), "date".to_string()];
    header.extend((0..model.latent_dim()).map(|i| format!("z_{i}")));
    w.write_record(&header).map_err(csv_err)?;
    for s in &surfaces {
        let code = model.encode_surface(s)?;
        let mut rec = vec![s.asset_id.clone(), s.observation_date.to_string()];
        rec.extend(code.mean.iter().map(f64::to_string));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn generate(a: &GenerateArgs) -> CliResult {
    let model = load_model(&a.model)?;
    let mut rng = substream(a.seed, "prior");
    let d = model.latent_dim();
    let mut surfaces = Vec::with_capacity(a.n);
    for i in 0..a.n {
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        surfaces.push(model.to_surface(&z, &format!("sample-{:04}", i + 1), epoch_date())?);
    }
    let mut w = create(&a.out)?;
    write_surfaces(&mut w, &surfaces)?;
    w.flush()?;
    if let Some(path) = &a.report {
        let reports = arbitrage_reports(&surfaces, &DenseResolution::default(), DEFAULT_TOLERANCE)?;
        write_json(Some(path), &reports)?;
    }
    Ok(())
}

pub fn interpolate(a: &InterpolateArgs) -> CliResult {
    let model = load_model(&a.model)?;
    let d = model.latent_dim();
    let corners: Vec<Vec<f64>> = a
        .corners
        .split(';')
        .map(|c| parse_point(c, d))
        .collect::<Result<_, _>>()?;
    if a.steps < 2 {
        return Err(CliError::Usage("--steps must be at least 2".into()));
    }
    let lerp = |u: &[f64], v: &[f64], s: f64| -> Vec<f64> {
        u.iter().zip(v).map(|(p, q)| p + s * (q - p)).collect()
    };
    let frac = |i: usize| i as f64 / (a.steps - 1) as f64;
    let mut surfaces = Vec::new();
    match corners.len() {
        2 => {
            for i in 0..a.steps {
                let z = lerp(&corners[0], &corners[1], frac(i));
                surfaces.push(model.to_surface(&z, &format!("interp-{i:03}"), epoch_date())?);
            }
        }
        4 => {
            for j in 0..a.steps {
                for i in 0..a.steps {
                    let bottom = lerp(&corners[0], &corners[1], frac(i));
                    let top = lerp(&corners[2], &corners[3], frac(i));
                    let z = lerp(&bottom, &top, frac(j));
                    surfaces.push(model.to_surface(
                        &z,
                        &format!("interp-{i:03}-{j:03}"),
                        epoch_date(),
                    )?);
                }
            }
        }
        n => {
            return Err(CliError::Usage(format!(
                "--corners needs 2 or 4 points, got {n}"
            )))
        }
    }
    let mut w = create(&a.out)?;
    write_surfaces(&mut w, &surfaces)?;
    w.flush()?;
    Ok(())
}

pub fn check_arb(a: &CheckArbArgs) -> CliResult {
    let resolution = DenseResolution {
        maturities: a.resolution,
        deltas: a.resolution,
        x_nodes: a.resolution,
    };
    let surfaces = match (&a.surfaces, &a.model, &a.z) {
        (Some(path), _, _) => load_surfaces(path, &GridSpec::default())?,
        (None, Some(m), Some(z)) => {
            let model = load_model(m)?;
            let z = parse_point(z, model.latent_dim())?;
            vec![model.to_surface(&z, "decoded", epoch_date())?]
        }
        _ => {
            return Err(CliError::Usage(
                "give --surfaces or --model with --z".into(),
            ))
        }
    };
    let reports = arbitrage_reports(&surfaces, &resolution, a.tolerance)?;
    write_json(a.out.as_deref(), &reports)
}

fn first_n(mut surfaces: Vec<VolSurface>, n: Option<usize>) -> Vec<VolSurface> {
    if let Some(n) = n {
        surfaces.truncate(n);
    }
    surfaces
}

pub fn bench_mask(a: &BenchMaskArgs) -> CliResult {
    let models: Vec<VaeModel> = a
        .models
        .iter()
        .map(|p| load_model(p))
        .collect::<Result<_, _>>()?;
    let ks: Vec<usize> = parse_list(&a.ks, "--ks")?;
    let surfaces = first_n(
        load_surfaces(&a.surfaces, models[0].grid())?,
        a.max_surfaces,
    );
    let refs: Vec<&VaeModel> = models.iter().collect();
    let config = LatentCalibrationConfig {
        starts: a.starts,
        seed: a.seed,
        ..LatentCalibrationConfig::default()
    };
    let rows = run_masking_benchmark(&refs, &surfaces, &ks, a.seed, &config)?;
    let mut w = create(&a.out)?;
    write_benchmark(&mut w, &rows)?;
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct HestonSurfaceFit {
    asset_id: String,
    date: String,
    heston: Option<HestonParams>,
    heston_mae_bps: Option<f64>,
    vae_z: Option<Vec<f64>>,
    vae_mae_bps: Option<f64>,
}

pub fn bench_heston(a: &BenchHestonArgs) -> CliResult {
    let model = a.model.as_deref().map(load_model).transpose()?;
    let grid = model.as_ref().map(|m| m.grid().clone()).unwrap_or_default();
    let surfaces = first_n(load_surfaces(&a.surfaces, &grid)?, a.max_surfaces);
    let heston_config = HestonCalibrationConfig {
        starts: a.heston_starts,
        seed: a.seed,
        ..HestonCalibrationConfig::default()
    };
    let vae_config = LatentCalibrationConfig {
        starts: a.vae_starts,
        seed: a.seed,
        ..LatentCalibrationConfig::default()
    };
    let fits: Vec<HestonSurfaceFit> = surfaces
        .par_iter()
        .map(|s| {
            let obs = s.observations();
            let heston = initial_guess(&obs, 0.0)
                .and_then(|g| heston_calibrate(&obs, &g, &heston_config))
                .ok()
                .and_then(|fit| {
                    let vols = heston_vols_at(&fit.params, &obs, false).ok()?;
                    Some((fit.params, mae_bps(&vols, s.as_flat()).ok()?))
                });
            let vae = model.as_ref().and_then(|m| {
                let fit = calibrate_latent(m, &obs, &vae_config).ok()?;
                let mae = mae_bps(fit.completed_surface.as_flat(), s.as_flat()).ok()?;
                Some((fit.z, mae))
            });
            HestonSurfaceFit {
                asset_id: s.asset_id.clone(),
                date: s.observation_date.to_string(),
                heston_mae_bps: heston.as_ref().map(|h| h.1),
                heston: heston.map(|h| h.0),
                vae_mae_bps: vae.as_ref().map(|v| v.1),
                vae_z: vae.map(|v| v.0),
            }
        })
        .collect();

    let mut assets: Vec<&str> = Vec::new();
    for f in &fits {
        if !assets.contains(&f.asset_id.as_str()) {
            assets.push(&f.asset_id);
        }
    }
    let mean = |xs: &[f64]| -> String {
        if xs.is_empty() {
            String::new()
        } else {
            (xs.iter().sum::<f64>() / xs.len() as f64).to_string()
        }
    };
    let mut w = csv::Writer::from_writer(create(&a.out)?);
    let csv_err = |e: csv::Error| VolError::Numerical(e.to_string());
    w.write_record([
        "asset_id",
        "n_surfaces",
        "heston_mae_bps",
        "vae_mae_bps",
        "heston_failures",
        "vae_failures",
    ])
    .map_err(csv_err)?;
    for asset in assets {
        let rows: Vec<&HestonSurfaceFit> = fits.iter().filter(|f| f.asset_id == asset).collect();
        let h: Vec<f64> = rows.iter().filter_map(|f| f.heston_mae_bps).collect();
        let v: Vec<f64> = rows.iter().filter_map(|f| f.vae_mae_bps).collect();
        let vae_failures = if model.is_some() {
            (rows.len() - v.len()).to_string()
        } else {
            String::new()
        };
        w.write_record([
            asset.to_string(),
            rows.len().to_string(),
            mean(&h),
            mean(&v),
            (rows.len() - h.len()).to_string(),
            vae_failures,
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    if let Some(path) = &a.report {
        write_json(Some(path), &fits)?;
    }
    Ok(())
}

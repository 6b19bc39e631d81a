//! The work behind each subcommand. Every command computes its results in
//! memory first and only then creates the output directory, so a failing run
//! leaves nothing behind.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use topica_core::analysis::{AutocorrOptions, Quantity};
use topica_core::image::{
    extract_fixed_patches, extract_training_patches, frame_file_name, normalize_image, read_pgm,
    read_sequence, resize_to_width, write_pgm_unit, write_sequence, CropRect, DEFAULT_FRAME_RATE,
};
use topica_core::matrix_io::Header;
use topica_core::stimulus::{
    generate_dead_leaves, generate_moving_bar, generate_pan, generate_single_basis_probe,
    BarStimulusSpec, DeadLeavesSpec, Orientation, PanSpec,
};
use topica_core::{
    adjacent_correlation, autocorrelation_with, build_topography, cluster_locality,
    compute_activation, fit_whitening, reconstruct, shuffle_topography, train, ActivationTrace,
    BasisModel, Error, FrameSequence, GrayImage, Topography, WhiteningModel,
};

use crate::config::RunConfig;
use crate::error::CliResult;
use crate::render::{encode_all, heatmaps, montage};

pub const CONFIG_FILE: &str = "run.cfg";
pub const HEATMAP_DIR: &str = "heatmaps";
pub const RECONSTRUCTION_DIR: &str = "reconstruction";
pub const STIMULUS_DIR: &str = "stimulus";

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(())
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "pgm" | "ppm" | "pnm"))
}

/// Netpbm files directly inside `dir`, sorted by name.
pub fn list_images(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image(p))
        .collect();
    paths.sort();
    Ok(paths)
}

fn prepare(
    img: &GrayImage,
    crop: Option<CropRect>,
    resize_width: Option<usize>,
) -> topica_core::Result<GrayImage> {
    let mut img = match crop {
        Some(rect) => img.crop(rect)?,
        None => img.clone(),
    };
    if let Some(w) = resize_width {
        img = resize_to_width(&img, w)?;
    }
    normalize_image(&img)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: BasisModel,
    pub whitening: WhiteningModel,
}

/// Images → patches → whitening → basis. Writes the whitening model, the
/// basis model with its training log and the resolved `run.cfg` into `out`.
pub fn cmd_train(config: &RunConfig, image_dir: &Path, out: &Path) -> CliResult<TrainOutcome> {
    config.validate()?;
    let paths = list_images(image_dir)?;
    if paths.is_empty() {
        return Err(Error::format(image_dir, "no PGM/PPM images found").into());
    }
    let images = paths
        .iter()
        .map(|p| read_pgm(p).and_then(|img| prepare(&img, config.crop, None)))
        .collect::<topica_core::Result<Vec<_>>>()?;
    let patches =
        extract_training_patches(&images, config.patch_side, config.n_patches, config.seed)?;
    let whitening = fit_whitening(&patches, config.k)?;
    let topo = build_topography(config.map_width, config.map_height, config.radius)?;
    let model = train(&patches, &whitening, &topo, &config.train_config())?;

    create_dir(out)?;
    whitening.save(out)?;
    model.save(out)?;
    write_file(&out.join(CONFIG_FILE), config.render())?;
    Ok(TrainOutcome { model, whitening })
}

/// Loads the whitening and basis models written by [`cmd_train`].
pub fn load_models(dir: &Path) -> CliResult<(WhiteningModel, BasisModel)> {
    let whitening = WhiteningModel::load(dir)?;
    let model = BasisModel::load(dir)?;
    if model.whitening_ref() != whitening.hash() {
        return Err(Error::ModelMismatch(format!(
            "basis in {} was trained against whitening {}, found {}",
            dir.display(),
            model.whitening_ref(),
            whitening.hash()
        ))
        .into());
    }
    Ok((whitening, model))
}

#[derive(Debug, Clone, PartialEq)]
pub enum ActivateInput {
    /// A frame-sequence directory, optionally cropped and resized before
    /// normalization.
    Frames {
        dir: PathBuf,
        crop: Option<CropRect>,
        resize_width: Option<usize>,
    },
    /// A bar sweeping across a square frame of `side` pixels.
    Bar {
        orientation: Orientation,
        side: Option<usize>,
        n_frames: Option<usize>,
    },
    /// A single frame equal to one basis image.
    Probe { unit: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivateRequest {
    pub model_dir: PathBuf,
    pub input: ActivateInput,
    pub origin: (usize, usize),
    /// Overrides the sequence's own rate.
    pub frame_rate: Option<f64>,
    pub out: PathBuf,
}

fn activation_input(
    req: &ActivateRequest,
    model: &BasisModel,
    side: usize,
) -> CliResult<(FrameSequence, bool)> {
    let rate = req.frame_rate.unwrap_or(DEFAULT_FRAME_RATE);
    Ok(match &req.input {
        ActivateInput::Frames {
            dir,
            crop,
            resize_width,
        } => {
            let raw = read_sequence(dir)?;
            if raw.is_empty() {
                return Err(Error::format(dir, "no frame_*.pgm files").into());
            }
            let seq = raw.map_frames(|f| prepare(f, *crop, *resize_width))?;
            let seq = FrameSequence::new(
                seq.frames().to_vec(),
                req.frame_rate.unwrap_or(raw.frame_rate()),
            )?;
            (seq, false)
        }
        ActivateInput::Bar {
            orientation,
            side: bar_side,
            n_frames,
        } => {
            let mut spec = BarStimulusSpec::with_defaults(bar_side.unwrap_or(side), *orientation);
            if let Some(n) = n_frames {
                spec.n_frames = *n;
            }
            let seq = generate_moving_bar(&spec)?;
            (FrameSequence::new(seq.frames().to_vec(), rate)?, true)
        }
        ActivateInput::Probe { unit } => {
            let frame = generate_single_basis_probe(model, *unit)?;
            (FrameSequence::new(vec![frame], rate)?, true)
        }
    })
}

/// Activations, energy heatmaps and reconstructions for one input sequence.
pub fn cmd_activate(req: &ActivateRequest) -> CliResult<ActivationTrace> {
    let (whitening, model) = load_models(&req.model_dir)?;
    let side = model.patch_side().ok_or(Error::DimensionMismatch {
        what: "square patch pixel count",
        expected: 0,
        got: model.n_pixels(),
    })?;
    let (seq, synthetic) = activation_input(req, &model, side)?;
    let patches = extract_fixed_patches(&seq, req.origin, side)?;
    let trace = compute_activation(&model, &whitening, &patches, seq.frame_rate())?;
    let maps = encode_all(&heatmaps(&trace, model.topography())?, 0.0, 1.0);
    let recon = reconstruct(&model, &trace)?;
    let recon_frames = (0..recon.n_samples())
        .map(|i| recon.patch_image(i))
        .collect();
    let recon_seq = FrameSequence::new(recon_frames, seq.frame_rate())?;
    let (lo, hi) = value_range(recon_seq.frames());

    create_dir(&req.out)?;
    trace.save(&req.out)?;
    let heat_dir = req.out.join(HEATMAP_DIR);
    create_dir(&heat_dir)?;
    for (i, bytes) in maps.iter().enumerate() {
        write_file(&heat_dir.join(frame_file_name(i)), bytes)?;
    }
    write_sequence(&req.out.join(RECONSTRUCTION_DIR), &recon_seq, lo, hi)?;
    if synthetic {
        let (lo, hi) = value_range(seq.frames());
        write_sequence(&req.out.join(STIMULUS_DIR), &seq, lo, hi)?;
    }
    Ok(trace)
}

fn value_range(frames: &[GrayImage]) -> (f64, f64) {
    let values = frames.iter().flat_map(|f| f.values().iter().copied());
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 1.0, lo + 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnalyzeMode {
    Autocorr {
        max_lag: usize,
        quantity: Quantity,
        shuffle_seed: u64,
    },
    Adjacency {
        /// Lays the trace's units out on a shuffled lattice first.
        shuffle_topo: Option<u64>,
        compare: Option<CompareWith>,
    },
    Locality {
        k: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareWith {
    pub trace_dir: PathBuf,
    pub shuffle_topo: Option<u64>,
    pub n_permutations: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyzeRequest {
    pub trace_dir: PathBuf,
    /// Supplies the lattice.
    pub model_dir: PathBuf,
    pub mode: AnalyzeMode,
    pub out: PathBuf,
}

pub const AUTOCORR_CSV: &str = "autocorr.csv";
pub const AUTOCORR_PER_BASIS_CSV: &str = "autocorr_per_basis.csv";
pub const AUTOCORR_SUMMARY: &str = "autocorr_summary.txt";
pub const ADJACENCY_CSV: &str = "adjacency.csv";
pub const ADJACENCY_SUMMARY: &str = "adjacency_summary.txt";
pub const LOCALITY_SUMMARY: &str = "locality.txt";

fn lattice_for(
    topo: &Topography,
    trace: &ActivationTrace,
    shuffle: Option<u64>,
) -> CliResult<Topography> {
    if trace.n_units() != topo.n_units() {
        return Err(Error::DimensionMismatch {
            what: "trace units vs lattice units",
            expected: topo.n_units(),
            got: trace.n_units(),
        }
        .into());
    }
    Ok(match shuffle {
        Some(seed) => shuffle_topography(topo, seed),
        None => topo.clone(),
    })
}

fn layout_label(shuffle: Option<u64>) -> String {
    match shuffle {
        Some(seed) => format!("shuffled:{seed}"),
        None => "lattice".into(),
    }
}

/// Writes the CSV and summary files of one analysis and returns the summary.
pub fn cmd_analyze(req: &AnalyzeRequest) -> CliResult<Header> {
    let trace = ActivationTrace::load(&req.trace_dir)?;
    let model = BasisModel::load(&req.model_dir)?;
    let topo = model.topography();
    let mut summary = Header::new();
    summary
        .set("model_hash", trace.model_ref())
        .set("n_frames", trace.n_frames());
    let mut files: Vec<(&str, String)> = Vec::new();
    match &req.mode {
        AnalyzeMode::Autocorr {
            max_lag,
            quantity,
            shuffle_seed,
        } => {
            lattice_for(topo, &trace, None)?;
            let options = AutocorrOptions {
                max_lag: *max_lag,
                quantity: *quantity,
                shuffle_seed: *shuffle_seed,
            };
            let report = autocorrelation_with(&trace, &options)?;
            let mut csv = String::from("lag,lag_seconds,mean_r,shuffled_mean_r\n");
            for (i, &lag) in report.lags.iter().enumerate() {
                let _ = writeln!(
                    csv,
                    "{lag},{:e},{:e},{:e}",
                    report.lag_seconds(lag),
                    report.mean_autocorr[i],
                    report.shuffled_mean[i]
                );
            }
            let mut per_basis = String::from("unit");
            for lag in &report.lags {
                let _ = write!(per_basis, ",lag{lag}");
            }
            per_basis.push('\n');
            for (unit, row) in report.included_units.iter().zip(&report.per_basis) {
                per_basis.push_str(&unit.to_string());
                for r in row {
                    let _ = write!(per_basis, ",{r:e}");
                }
                per_basis.push('\n');
            }
            summary
                .set("mode", "autocorr")
                .set("quantity", quantity)
                .set("max_lag", max_lag)
                .set(
                    "max_lag_seconds",
                    format!("{:e}", report.lag_seconds(*max_lag)),
                )
                .set("frame_rate", format!("{:e}", report.frame_rate))
                .set("shuffle_seed", shuffle_seed)
                .set("included_units", report.included_units.len())
                .set("excluded_units", report.excluded);
            files.push((AUTOCORR_CSV, csv));
            files.push((AUTOCORR_PER_BASIS_CSV, per_basis));
            files.push((AUTOCORR_SUMMARY, String::new()));
        }
        AnalyzeMode::Adjacency {
            shuffle_topo,
            compare,
        } => {
            let lattice = lattice_for(topo, &trace, *shuffle_topo)?;
            let mut report = adjacent_correlation(&trace, &lattice)?;
            summary
                .set("mode", "adjacency")
                .set("layout", layout_label(*shuffle_topo))
                .set("n_pairs", report.pair_correlations.len())
                .set("excluded_pairs", report.excluded_pairs)
                .set("mean_r", format!("{:e}", report.mean_r));
            if let Some(cmp) = compare {
                let other = ActivationTrace::load(&cmp.trace_dir)?;
                let other_lattice = lattice_for(topo, &other, cmp.shuffle_topo)?;
                let other_report = adjacent_correlation(&other, &other_lattice)?;
                report = report.compare(&other_report, cmp.n_permutations, cmp.seed)?;
                let c = report.comparison.expect("comparison just made");
                summary
                    .set("other_model_hash", other.model_ref())
                    .set("other_layout", layout_label(cmp.shuffle_topo))
                    .set("other_mean_r", format!("{:e}", c.other_mean_r))
                    .set("p_value", format!("{:e}", c.p_value))
                    .set("n_permutations", c.n_permutations)
                    .set("permutation_seed", cmp.seed);
            }
            let mut csv = String::from("unit_i,unit_j,r\n");
            for p in &report.pair_correlations {
                let _ = writeln!(csv, "{},{},{:e}", p.unit_i, p.unit_j, p.r);
            }
            files.push((ADJACENCY_CSV, csv));
            files.push((ADJACENCY_SUMMARY, String::new()));
        }
        AnalyzeMode::Locality { k } => {
            lattice_for(topo, &trace, None)?;
            let value = cluster_locality(&trace, topo, *k)?;
            summary
                .set("mode", "locality")
                .set("k", k)
                .set("locality", format!("{value:e}"));
            files.push((LOCALITY_SUMMARY, String::new()));
        }
    }
    create_dir(&req.out)?;
    for (name, body) in files {
        let text = if body.is_empty() {
            summary.render()
        } else {
            body
        };
        write_file(&req.out.join(name), text)?;
    }
    Ok(summary)
}

/// Basis montage of a trained model.
pub fn cmd_render(model_dir: &Path, out: &Path) -> CliResult<GrayImage> {
    let model = BasisModel::load(model_dir)?;
    let img = montage(&model)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_pgm_unit(out, &img)?;
    Ok(img)
}

#[derive(Debug, Clone, PartialEq)]
pub enum SynthRequest {
    Leaves {
        spec: DeadLeavesSpec,
        out: PathBuf,
    },
    Pan {
        image: PathBuf,
        spec: PanSpec,
        out: PathBuf,
    },
    Bar {
        spec: BarStimulusSpec,
        frame_rate: f64,
        out: PathBuf,
    },
}

/// Synthetic scenes and sequences for desk-scale runs.
pub fn cmd_synth(req: &SynthRequest) -> CliResult<()> {
    match req {
        SynthRequest::Leaves { spec, out } => {
            let img = generate_dead_leaves(spec)?;
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                create_dir(parent)?;
            }
            write_pgm_unit(out, &img)?;
        }
        SynthRequest::Pan { image, spec, out } => {
            let img = read_pgm(image)?;
            let seq = generate_pan(&img, spec)?;
            write_sequence(out, &seq, 0.0, 1.0)?;
        }
        SynthRequest::Bar {
            spec,
            frame_rate,
            out,
        } => {
            let seq = generate_moving_bar(spec)?;
            let seq = FrameSequence::new(seq.frames().to_vec(), *frame_rate)?;
            let (lo, hi) = (
                spec.foreground.min(spec.background),
                spec.foreground.max(spec.background),
            );
            write_sequence(out, &seq, lo, hi)?;
        }
    }
    Ok(())
}

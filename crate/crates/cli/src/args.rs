//! Command-line grammar and its translation into command requests.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use topica_core::analysis::Quantity;
use topica_core::stimulus::{BarStimulusSpec, DeadLeavesSpec, Orientation, PanSpec};

use crate::commands::{
    ActivateInput, ActivateRequest, AnalyzeMode, AnalyzeRequest, CompareWith, SynthRequest,
};
use crate::config::{parse_crop, parse_pair, RunConfig};
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "topica", version, about = "Topographic ICA on image patches")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn whitening and a topographic basis from a directory of images
    Train(TrainArgs),
    /// Run a trained model over frames, a moving bar or a basis probe
    Activate(ActivateArgs),
    /// Autocorrelation, adjacent energy correlation or cluster locality of a trace
    Analyze(AnalyzeArgs),
    /// Montage of the basis images laid out on the lattice
    Render(RenderArgs),
    /// Synthetic images and sequences
    #[command(subcommand)]
    Synth(SynthCommand),
}

/// Settings that may also come from a config file.
#[derive(Debug, Args, Default)]
pub struct ConfigArgs {
    /// `key = value` settings file; flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub patch_side: Option<String>,
    #[arg(long)]
    pub n_patches: Option<String>,
    #[arg(long)]
    pub k: Option<String>,
    #[arg(long)]
    pub map_width: Option<String>,
    #[arg(long)]
    pub map_height: Option<String>,
    /// 0 trains plain ICA
    #[arg(long)]
    pub radius: Option<String>,
    #[arg(long)]
    pub epsilon: Option<String>,
    #[arg(long)]
    pub step0: Option<String>,
    #[arg(long)]
    pub max_iters: Option<String>,
    #[arg(long)]
    pub tol: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub frame_rate: Option<String>,
    /// row,col,height,width applied to every training image
    #[arg(long)]
    pub crop: Option<String>,
    /// 0 trains full-batch
    #[arg(long)]
    pub batch_size: Option<String>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let flags = [
            ("patch_side", &self.patch_side),
            ("n_patches", &self.n_patches),
            ("k", &self.k),
            ("map_width", &self.map_width),
            ("map_height", &self.map_height),
            ("radius", &self.radius),
            ("epsilon", &self.epsilon),
            ("step0", &self.step0),
            ("max_iters", &self.max_iters),
            ("tol", &self.tol),
            ("seed", &self.seed),
            ("frame_rate", &self.frame_rate),
            ("crop", &self.crop),
            ("batch_size", &self.batch_size),
        ];
        let overrides: Vec<(&str, String)> = flags
            .into_iter()
            .filter_map(|(k, v)| v.clone().map(|v| (k, v)))
            .collect();
        RunConfig::resolve(self.config.as_deref(), &overrides)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory of PGM/PPM training images
    #[arg(long)]
    pub images: PathBuf,
    /// Output directory for the model files
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OrientationArg {
    Horizontal,
    Vertical,
}

impl From<OrientationArg> for Orientation {
    fn from(o: OrientationArg) -> Self {
        match o {
            OrientationArg::Horizontal => Orientation::Horizontal,
            OrientationArg::Vertical => Orientation::Vertical,
        }
    }
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("input").required(true).args(["frames", "bar", "probe"])))]
pub struct ActivateArgs {
    /// Directory written by `train`
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Frame-sequence directory (frame_000000.pgm, ...)
    #[arg(long)]
    pub frames: Option<PathBuf>,
    /// Moving-bar stimulus
    #[arg(long, value_enum)]
    pub bar: Option<OrientationArg>,
    /// Probe with the basis image of this unit
    #[arg(long)]
    pub probe: Option<usize>,
    /// Patch origin row,col within each frame
    #[arg(long, default_value = "0,0")]
    pub origin: String,
    /// row,col,height,width applied to each frame before resizing
    #[arg(long)]
    pub crop: Option<String>,
    #[arg(long)]
    pub resize_width: Option<usize>,
    #[arg(long)]
    pub frame_rate: Option<f64>,
    /// Bar frame side in pixels (default: the patch side)
    #[arg(long)]
    pub bar_side: Option<usize>,
    /// Bar frame count (default: twice the frame side)
    #[arg(long)]
    pub bar_frames: Option<usize>,
}

impl ActivateArgs {
    pub fn request(&self) -> CliResult<ActivateRequest> {
        let input = if let Some(dir) = &self.frames {
            ActivateInput::Frames {
                dir: dir.clone(),
                crop: self.crop.as_deref().map(parse_crop).transpose()?,
                resize_width: self.resize_width,
            }
        } else if let Some(o) = self.bar {
            ActivateInput::Bar {
                orientation: o.into(),
                side: self.bar_side,
                n_frames: self.bar_frames,
            }
        } else if let Some(unit) = self.probe {
            ActivateInput::Probe { unit }
        } else {
            return Err(CliError::usage(
                "one of --frames, --bar, --probe is required",
            ));
        };
        Ok(ActivateRequest {
            model_dir: self.model.clone(),
            input,
            origin: parse_pair("origin", &self.origin)?,
            frame_rate: self.frame_rate,
            out: self.out.clone(),
        })
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Autocorr,
    Adjacency,
    Locality,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum QuantityArg {
    Activation,
    Energy,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Directory written by `activate`
    #[arg(long)]
    pub trace: PathBuf,
    /// Model directory supplying the lattice
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum)]
    pub mode: ModeArg,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub max_lag: usize,
    #[arg(long, value_enum, default_value = "activation")]
    pub quantity: QuantityArg,
    /// Seed of the frame shuffle behind the autocorrelation baseline
    #[arg(long, default_value_t = 0)]
    pub shuffle_baseline: u64,
    /// Randomly reassign this trace's units to lattice cells first
    #[arg(long)]
    pub shuffle_topo: Option<u64>,
    /// Second trace for a permutation test of adjacent correlations
    #[arg(long)]
    pub compare: Option<PathBuf>,
    /// Randomly reassign the compared trace's units to lattice cells first
    #[arg(long)]
    pub compare_shuffle_topo: Option<u64>,
    #[arg(long, default_value_t = 10_000)]
    pub permutations: usize,
    #[arg(long, default_value_t = 0)]
    pub permutation_seed: u64,
    /// Units per frame for the locality score
    #[arg(long, default_value_t = 5)]
    pub k: usize,
}

impl AnalyzeArgs {
    pub fn request(&self) -> CliResult<AnalyzeRequest> {
        let mode = match self.mode {
            ModeArg::Autocorr => AnalyzeMode::Autocorr {
                max_lag: self.max_lag,
                quantity: match self.quantity {
                    QuantityArg::Activation => Quantity::Activation,
                    QuantityArg::Energy => Quantity::Energy,
                },
                shuffle_seed: self.shuffle_baseline,
            },
            ModeArg::Adjacency => AnalyzeMode::Adjacency {
                shuffle_topo: self.shuffle_topo,
                compare: self.compare.as_ref().map(|dir| CompareWith {
                    trace_dir: dir.clone(),
                    shuffle_topo: self.compare_shuffle_topo,
                    n_permutations: self.permutations,
                    seed: self.permutation_seed,
                }),
            },
            ModeArg::Locality => AnalyzeMode::Locality { k: self.k },
        };
        Ok(AnalyzeRequest {
            trace_dir: self.trace.clone(),
            model_dir: self.model.clone(),
            mode,
            out: self.out.clone(),
        })
    }
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Output PGM path
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum SynthCommand {
    /// Dead-leaves occlusion image (PGM)
    Leaves {
        #[arg(long, default_value_t = 512)]
        width: usize,
        #[arg(long, default_value_t = 512)]
        height: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        min_radius: Option<f64>,
        #[arg(long)]
        max_radius: Option<f64>,
        #[arg(long)]
        blur: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Camera pan over a still image, as a frame-sequence directory
    Pan {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 600)]
        frames: usize,
        /// Frame width,height
        #[arg(long, default_value = "9,9")]
        size: String,
        /// Top-left row,col of the first frame
        #[arg(long, default_value = "0,0")]
        start: String,
        /// Pixels per frame, row,col
        #[arg(long, default_value = "0,0.1")]
        velocity: String,
        #[arg(long, default_value_t = 24.0)]
        frame_rate: f64,
    },
    /// Moving-bar sequence directory
    Bar {
        #[arg(long, value_enum)]
        orientation: OrientationArg,
        #[arg(long)]
        side: usize,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long, default_value_t = 24.0)]
        frame_rate: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

impl SynthCommand {
    pub fn request(&self) -> CliResult<SynthRequest> {
        Ok(match self {
            SynthCommand::Leaves {
                width,
                height,
                seed,
                min_radius,
                max_radius,
                blur,
                out,
            } => {
                let mut spec = DeadLeavesSpec::new(*width, *height, *seed);
                spec.min_radius = min_radius.unwrap_or(spec.min_radius);
                spec.max_radius = max_radius.unwrap_or(spec.max_radius);
                spec.blur_sigma = blur.unwrap_or(spec.blur_sigma);
                SynthRequest::Leaves {
                    spec,
                    out: out.clone(),
                }
            }
            SynthCommand::Pan {
                image,
                out,
                frames,
                size,
                start,
                velocity,
                frame_rate,
            } => {
                let (frame_width, frame_height) = parse_pair("size", size)?;
                SynthRequest::Pan {
                    image: image.clone(),
                    spec: PanSpec {
                        frame_width,
                        frame_height,
                        n_frames: *frames,
                        start: parse_pair("start", start)?,
                        velocity: parse_pair("velocity", velocity)?,
                        frame_rate: *frame_rate,
                    },
                    out: out.clone(),
                }
            }
            SynthCommand::Bar {
                orientation,
                side,
                frames,
                frame_rate,
                out,
            } => {
                let mut spec = BarStimulusSpec::with_defaults(*side, (*orientation).into());
                if let Some(n) = frames {
                    spec.n_frames = *n;
                }
                SynthRequest::Bar {
                    spec,
                    frame_rate: *frame_rate,
                    out: out.clone(),
                }
            }
        })
    }
}

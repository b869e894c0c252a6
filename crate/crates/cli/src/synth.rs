use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use genreprobe::synthetic::{generate, third_octave_tones, SyntheticSpec};

pub const SPEC_FILE: &str = "synthetic.toml";

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Directory to create the dataset in.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 30)]
    pub clips_per_class: usize,
    #[arg(long, default_value_t = 3.0)]
    pub seconds: f64,
    #[arg(long, default_value_t = 20.0)]
    pub snr_db: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl SynthArgs {
    pub fn spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            n_classes: self.classes,
            clips_per_class: self.clips_per_class,
            clip_seconds: self.seconds,
            class_frequencies_hz: third_octave_tones(self.classes),
            snr_db: self.snr_db,
            seed: self.seed,
            ..SyntheticSpec::default()
        }
    }
}

pub fn run(args: &SynthArgs, quiet: bool) -> Result<()> {
    let spec = args.spec();
    let manifest = generate(&spec, &args.out)?;
    let spec_path = args.out.join(SPEC_FILE);
    std::fs::write(&spec_path, toml::to_string(&spec)?)
        .with_context(|| format!("writing {}", spec_path.display()))?;
    if !quiet {
        eprintln!("wrote {} clips to {}", manifest.len(), args.out.display());
    }
    crate::emit(&format!(
        "{} clips, {} classes\n",
        manifest.len(),
        manifest.num_classes()
    ))
}

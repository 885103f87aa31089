//! `mexdet synth`: generate the synthetic dataset.
//!
//! The dataset writer's own `manifest.json` (command `synth`, embedded
//! config, split listing) doubles as this command's run manifest.

use mexdet_core::dataset::{save_dataset, synth_dataset, SynthConfig};

use crate::args::SynthArgs;
use crate::commands::Ctx;
use crate::config::base_config;
use crate::errors::{CliError, CliResult};

pub fn resolve(ctx: &Ctx, args: &SynthArgs) -> CliResult<SynthConfig> {
    let mut cfg: SynthConfig = base_config(ctx.config.as_deref(), "synth")?;
    if let Some(s) = ctx.seed {
        cfg.seed = s;
    }
    if let Some(v) = args.train_count {
        cfg.train_count = v;
    }
    if let Some(v) = args.test_count {
        cfg.test_count = v;
    }
    if let Some(v) = args.image_w {
        cfg.image_w = v;
    }
    if let Some(v) = args.image_h {
        cfg.image_h = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(ctx: &Ctx, args: &SynthArgs) -> CliResult<()> {
    let cfg = resolve(ctx, args)?;
    let out = ctx.out_dir()?;

    if out.exists() {
        let occupied = std::fs::read_dir(out)
            .map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?
            .next()
            .is_some();
        if occupied && !args.force {
            return Err(CliError::Data(format!(
                "{}: output directory is not empty (pass --force to replace it)",
                out.display()
            )));
        }
        if occupied {
            std::fs::remove_dir_all(out)
                .map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?;
        }
    }
    let out = ctx.ensure_out_dir()?;

    let ds = synth_dataset(&cfg)?;
    save_dataset(&out, &ds)?;
    println!(
        "wrote {} train / {} test images to {}",
        ds.train_ids.len(),
        ds.test_ids.len(),
        out.display()
    );
    Ok(())
}

//! Parameter and receptive-field report.

use std::fmt::Write as _;

use hcmamba_core::conv::{gridding_coverage, receptive_field, DilationSchedule};
use hcmamba_core::model::{ConvVariant, HcMamba, ModelConfig};

use crate::error::Result;

pub const SCHEDULES: [&[usize]; 4] = [&[1, 1, 1], &[2, 2, 2], &[1, 2, 3], &[1, 2, 3, 1]];

/// Parameter totals for every conv variant of `base`, in [`ConvVariant::ALL`] order.
pub fn variant_counts(base: &ModelConfig) -> Result<Vec<(ConvVariant, usize)>> {
    ConvVariant::ALL
        .iter()
        .map(|&v| {
            let cfg = ModelConfig {
                conv_variant: v,
                ..base.clone()
            };
            Ok((v, HcMamba::new(cfg)?.num_parameters()))
        })
        .collect()
}

pub fn render(cfg: &ModelConfig) -> Result<String> {
    let mut s = String::new();
    let model = HcMamba::new(cfg.clone())?;
    writeln!(
        s,
        "model: C={} depths={:?} N={} classes={} input={}x{} variant={}",
        cfg.base_channels,
        cfg.stage_depths,
        cfg.state_size,
        cfg.num_classes,
        cfg.input_size.0,
        cfg.input_size.1,
        cfg.conv_variant
    )
    .unwrap();
    writeln!(s, "\nparameters by module ({}):", cfg.conv_variant).unwrap();
    for row in model.count_by_module() {
        writeln!(s, "  {:<10} {:>12}", row.group, row.count).unwrap();
    }
    writeln!(s, "  {:<10} {:>12}", "total", model.num_parameters()).unwrap();
    writeln!(s, "\nparameters by component:").unwrap();
    for row in model.count_by_component() {
        writeln!(s, "  {:<10} {:>12}", row.group, row.count).unwrap();
    }

    let counts = variant_counts(cfg)?;
    let full = counts[0].1 as f64;
    writeln!(s, "\nconv variants:").unwrap();
    for (v, n) in &counts {
        writeln!(
            s,
            "  {:<13} {:>12}  ({:.2}M, {:.3} of full)",
            v.as_str(),
            n,
            *n as f64 / 1e6,
            *n as f64 / full
        )
        .unwrap();
    }
    writeln!(s, "  ratio dw_only/full = {:.3}", counts[2].1 as f64 / full).unwrap();
    writeln!(s, "  ratio both/full    = {:.3}", counts[3].1 as f64 / full).unwrap();

    writeln!(s, "\nreceptive field (k=3):").unwrap();
    for rates in SCHEDULES {
        let sched = DilationSchedule::new(rates.to_vec())?;
        let rf = receptive_field(&sched, 3)?;
        let cov = gridding_coverage(&sched, 3)?;
        let holes = cov.mask.iter().filter(|&&m| !m).count();
        writeln!(
            s,
            "  {:<10} rf={:<3} {} ({} holes in [{}, {}])",
            format!("{rates:?}").replace(' ', ""),
            rf,
            if cov.continuous { "continuous" } else { "discontinuous" },
            holes,
            cov.min(),
            cov.max()
        )
        .unwrap();
    }
    Ok(s)
}

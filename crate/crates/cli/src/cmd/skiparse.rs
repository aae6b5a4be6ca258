use std::path::PathBuf;

use clap::Subcommand;
use osp_core::skiparse::{
    ad_avg_asymptotic, ad_avg_brute_force, ad_avg_closed_form, build_plan, rope_apply, AttentionSpec,
    DistanceConvention, Mechanism, RopeConfig, SkipKind, DEFAULT_BRUTE_FORCE_CAP, DEFAULT_ROPE_BASE,
};
use osp_core::TokenGrid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::parse_dims3;
use crate::error::{CliError, Result};
use crate::io::{emit, round3, write_bytes};
use crate::Ctx;

#[derive(Subcommand)]
pub enum SkiparseCmd {
    /// Single Skip and Group Skip permutations for a token grid.
    Plan {
        #[arg(long, value_parser = parse_dims3)]
        grid: [usize; 3],
        #[arg(long)]
        k: usize,
        /// Also write u32 little-endian index files into this directory.
        #[arg(long)]
        bin_dir: Option<PathBuf>,
    },
    /// Average attention distance, closed form and optionally by BFS.
    Analyze {
        #[arg(long, value_parser = parse_dims3)]
        grid: [usize; 3],
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long, default_value = "skiparse")]
        mechanism: Mechanism,
        #[arg(long)]
        brute_force: bool,
        #[arg(long, default_value_t = DEFAULT_BRUTE_FORCE_CAP)]
        cap: usize,
    },
    /// Norm preservation and relative-offset checks for multi-axis RoPE.
    RopeCheck {
        #[arg(long, default_value_t = 96)]
        dim: usize,
        #[arg(long, default_value_t = 3)]
        axes: usize,
        #[arg(long, default_value_t = 100)]
        pairs: usize,
        #[arg(long, default_value_t = 64)]
        extent: usize,
        #[arg(long, default_value_t = DEFAULT_ROPE_BASE)]
        base: f64,
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
    },
}

fn grid(dims: [usize; 3]) -> Result<TokenGrid> {
    Ok(TokenGrid::new(dims[0], dims[1], dims[2])?)
}

#[derive(Serialize)]
struct BundleStats {
    bundles: usize,
    single_bundle_len: usize,
    group_bundle_len: usize,
    padded_slots: usize,
}

#[derive(Serialize)]
struct Analysis {
    mechanism: Mechanism,
    k: usize,
    grid: [usize; 3],
    len: usize,
    /// Distinct-pair mean, rounded to 3 decimals.
    ad_avg_closed: f64,
    ad_avg_closed_exact: f64,
    ad_avg_closed_include_self: f64,
    ad_avg_asymptotic: f64,
    ad_avg_brute: Option<f64>,
    ad_avg_brute_include_self: Option<f64>,
    max_distance: Option<usize>,
    histogram: Option<Vec<u64>>,
    bundle_stats: Option<BundleStats>,
}

fn le_bytes(v: &[u32]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn rope_check(dim: usize, axes: usize, pairs: usize, extent: usize, base: f64, tolerance: f64, seed: u64) -> Result<serde_json::Value> {
    if extent < 2 {
        return Err(CliError::Input("--extent must be >= 2".into()));
    }
    let cfg = RopeConfig::with_base(dim, vec![extent; axes], base)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dot = |a: &[f32], b: &[f32]| -> f64 { a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum() };
    let (mut norm_err, mut offset_err) = (0.0f64, 0.0f64);
    for _ in 0..pairs {
        let q: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let u: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let delta: Vec<usize> = (0..axes).map(|_| rng.gen_range(0..extent)).collect();
        let pos = |rng: &mut ChaCha8Rng| -> Vec<usize> { delta.iter().map(|&d| rng.gen_range(0..extent - d)).collect() };
        let (p1, p2) = (pos(&mut rng), pos(&mut rng));
        let shift = |p: &[usize]| -> Vec<usize> { p.iter().zip(&delta).map(|(a, d)| a + d).collect() };
        let rq1 = rope_apply(&q, &p1, &cfg)?;
        norm_err = norm_err.max((dot(&rq1, &rq1).sqrt() - dot(&q, &q).sqrt()).abs());
        let a = dot(&rq1, &rope_apply(&u, &shift(&p1), &cfg)?);
        let b = dot(&rope_apply(&q, &p2, &cfg)?, &rope_apply(&u, &shift(&p2), &cfg)?);
        offset_err = offset_err.max((a - b).abs());
    }
    Ok(serde_json::json!({
        "dim": dim,
        "axes": axes,
        "pairs": pairs,
        "norm_max_err": norm_err,
        "offset_max_err": offset_err,
        "pass": norm_err <= tolerance && offset_err <= tolerance,
    }))
}

pub fn run(cmd: SkiparseCmd, ctx: &Ctx) -> Result<()> {
    match cmd {
        SkiparseCmd::Plan { grid: dims, k, bin_dir } => {
            let plan = build_plan(grid(dims)?, k)?;
            if let Some(dir) = &bin_dir {
                std::fs::create_dir_all(dir).map_err(|source| CliError::Write {
                    path: dir.clone(),
                    source,
                })?;
                for which in [SkipKind::Single, SkipKind::Group] {
                    let name = match which {
                        SkipKind::Single => "single",
                        SkipKind::Group => "group",
                    };
                    write_bytes(&dir.join(format!("{name}_perm.u32")), &le_bytes(plan.perm(which)))?;
                    write_bytes(&dir.join(format!("{name}_gather.u32")), &le_bytes(plan.gather(which)))?;
                }
            }
            emit(&serde_json::json!({
                "grid": dims,
                "k": k,
                "len": plan.len(),
                "single_bundle_len": plan.single_bundle_len(),
                "group_bundle_len": plan.group_bundle_len(),
                "padded_slots": plan.padded_slots(),
                "single_perm": plan.single_perm,
                "single_gather": plan.single_gather,
                "group_perm": plan.group_perm,
                "group_gather": plan.group_gather,
            }))
        }
        SkiparseCmd::Analyze {
            grid: dims,
            k,
            mechanism,
            brute_force,
            cap,
        } => {
            let g = grid(dims)?;
            let spec = AttentionSpec::new(mechanism, k, g)?;
            let exact = ad_avg_closed_form(&spec, DistanceConvention::DistinctPairs);
            let brute = if brute_force {
                Some(ad_avg_brute_force(&spec, cap)?)
            } else {
                None
            };
            let bundle_stats = if mechanism == Mechanism::Skiparse {
                build_plan(g, k).ok().map(|p| BundleStats {
                    bundles: p.bundle_count(),
                    single_bundle_len: p.single_bundle_len(),
                    group_bundle_len: p.group_bundle_len(),
                    padded_slots: p.padded_slots(),
                })
            } else {
                None
            };
            emit(&Analysis {
                mechanism,
                k: if mechanism.uses_ratio() { k } else { 1 },
                grid: dims,
                len: g.len(),
                ad_avg_closed: round3(exact),
                ad_avg_closed_exact: exact,
                ad_avg_closed_include_self: ad_avg_closed_form(&spec, DistanceConvention::IncludeSelf),
                ad_avg_asymptotic: ad_avg_asymptotic(&spec),
                ad_avg_brute: brute.as_ref().map(|b| b.mean(DistanceConvention::DistinctPairs)),
                ad_avg_brute_include_self: brute.as_ref().map(|b| b.mean(DistanceConvention::IncludeSelf)),
                max_distance: brute.as_ref().map(|b| b.max_distance()),
                histogram: brute.map(|b| b.histogram),
                bundle_stats,
            })
        }
        SkiparseCmd::RopeCheck {
            dim,
            axes,
            pairs,
            extent,
            base,
            tolerance,
        } => emit(&rope_check(dim, axes, pairs, extent, base, tolerance, ctx.seed)?),
    }
}

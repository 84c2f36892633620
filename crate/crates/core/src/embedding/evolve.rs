//! First band, progressive append, and joint batch optimization.

use super::affinity::affinities;
use super::align::{penalty_indexed, Matching};
use super::gradient::kl_cost_unchecked;
use super::init::{first_band_positions, warm_start};
use super::optimize::{self, Chain, FreeBand};
pub use super::optimize::StepObserver;
use super::{
    config_hash, BandLayout, BandPoint, EmbedError, EmbeddingConfig, EmbeddingMode,
    EvolutionLayout, Point2,
};
use crate::features::FeatureMatrix;
use crate::rng::rng_for;

fn check_rows(x: &FeatureMatrix) -> Result<(), EmbedError> {
    if x.rows() < 3 {
        return Err(EmbedError::Input(format!(
            "a snapshot needs at least 3 instances to embed, `{}` has {}",
            x.source_name(),
            x.rows()
        )));
    }
    Ok(())
}

fn frozen_upto(config: &EmbeddingConfig, last: usize) -> Option<usize> {
    match config.mode {
        EmbeddingMode::Progressive => Some(last),
        EmbeddingMode::Batch => None,
    }
}

fn make_band(
    index: usize,
    iteration: u64,
    x: &FeatureMatrix,
    pos: &[Point2],
    config: &EmbeddingConfig,
) -> BandLayout {
    BandLayout {
        index,
        training_iteration: iteration,
        center: config.band_center(index),
        width: config.band_width,
        points: x
            .instance_ids()
            .iter()
            .zip(pos)
            .map(|(id, p)| BandPoint {
                instance_id: id.clone(),
                x: p[0],
                y: p[1],
            })
            .collect(),
    }
}

/// Embeds the first snapshot of a run into band 0.
pub fn embed_first(
    x: &FeatureMatrix,
    iteration: u64,
    config: &EmbeddingConfig,
) -> Result<EvolutionLayout, EmbedError> {
    embed_first_observed(x, iteration, config, None)
}

/// [`embed_first`] with a per-step objective callback.
pub fn embed_first_observed(
    x: &FeatureMatrix,
    iteration: u64,
    config: &EmbeddingConfig,
    observer: Option<StepObserver<'_>>,
) -> Result<EvolutionLayout, EmbedError> {
    config.validate()?;
    check_rows(x)?;
    let init = first_band_positions(x, config, 0)?;
    let p = affinities(x, config.perplexity)?;
    let mut bands = [FreeBand {
        p: &p,
        band: 0,
        pos: init,
    }];
    optimize::run(&mut bands, &[], config, observer);
    Ok(EvolutionLayout {
        config: config.clone(),
        bands: vec![make_band(0, iteration, x, &bands[0].pos, config)],
        config_hash: config_hash(config, &[iteration]),
        frozen_upto: frozen_upto(config, 0),
    })
}

/// Appends snapshot `x` as a new band, optimizing only the new band.
///
/// The objective is the KL cost of the new band plus the alignment penalty to
/// the previous band. Earlier bands are copied into the result unchanged.
pub fn append_iteration(
    layout: &EvolutionLayout,
    x: &FeatureMatrix,
    iteration: u64,
    config: &EmbeddingConfig,
) -> Result<EvolutionLayout, EmbedError> {
    config.validate()?;
    if *config != layout.config {
        return Err(EmbedError::Config(
            "config differs from the one the layout was built with".into(),
        ));
    }
    let Some(prev) = layout.bands.last() else {
        return Err(EmbedError::Input("cannot append to an empty layout".into()));
    };
    if layout.frozen_upto != Some(layout.bands.len() - 1) {
        return Err(EmbedError::Input(
            "only progressive layouts with every band frozen can be appended to".into(),
        ));
    }
    if iteration <= prev.training_iteration {
        return Err(EmbedError::Input(format!(
            "training iteration {iteration} does not follow {}",
            prev.training_iteration
        )));
    }
    check_rows(x)?;
    let k = layout.bands.len();
    let prev_pos = prev.positions();
    let matching = Matching::by_id(x.instance_ids(), &prev.instance_ids());
    if matching.is_empty() {
        log::warn!("alignment coverage: band {k} shares no instances with band {}", k - 1);
    }
    let p = affinities(x, config.perplexity)?;
    let mut rng = rng_for(config.seed, k as u64);
    let init = warm_start(x, &prev_pos, &matching, k, config, &mut rng);

    let w = matching.weight(config.lambda_align);
    let chains: Vec<Chain> = if w > 0.0 {
        matching
            .pairs
            .iter()
            .map(|&(i, j)| Chain {
                nodes: vec![(0, i)],
                links: vec![],
                anchor: Some((prev_pos[j][1], w)),
            })
            .collect()
    } else {
        Vec::new()
    };
    let mut bands = [FreeBand {
        p: &p,
        band: k,
        pos: init,
    }];
    optimize::run(&mut bands, &chains, config, None);

    let mut out = layout.bands.clone();
    out.push(make_band(k, iteration, x, &bands[0].pos, config));
    let iterations: Vec<u64> = out.iter().map(|b| b.training_iteration).collect();
    Ok(EvolutionLayout {
        config: config.clone(),
        config_hash: config_hash(config, &iterations),
        bands: out,
        frozen_upto: Some(k),
    })
}

/// Optimizes all bands jointly: the sum of per-band KL costs plus alignment
/// penalties between every pair of consecutive bands. Afterwards all y values
/// are shifted so that band 0 has mean height 0.
///
/// A single snapshot reduces to [`embed_first`].
pub fn batch_embed(
    snapshots: &[(u64, &FeatureMatrix)],
    config: &EmbeddingConfig,
) -> Result<EvolutionLayout, EmbedError> {
    batch_embed_observed(snapshots, config, None)
}

/// [`batch_embed`] with a per-step objective callback.
pub fn batch_embed_observed(
    snapshots: &[(u64, &FeatureMatrix)],
    config: &EmbeddingConfig,
    observer: Option<StepObserver<'_>>,
) -> Result<EvolutionLayout, EmbedError> {
    config.validate()?;
    match snapshots {
        [] => return Err(EmbedError::Input("batch embedding needs a snapshot".into())),
        [(it, x)] => return embed_first_observed(x, *it, config, observer),
        _ => {}
    }
    for w in snapshots.windows(2) {
        if w[1].0 <= w[0].0 {
            return Err(EmbedError::Input(format!(
                "training iterations must increase: {} then {}",
                w[0].0, w[1].0
            )));
        }
    }
    for (_, x) in snapshots {
        check_rows(x)?;
    }

    let mut positions: Vec<Vec<Point2>> = Vec::with_capacity(snapshots.len());
    let mut matchings: Vec<Matching> = vec![Matching::default()];
    positions.push(first_band_positions(snapshots[0].1, config, 0)?);
    for k in 1..snapshots.len() {
        let x = snapshots[k].1;
        let m = Matching::by_id(x.instance_ids(), snapshots[k - 1].1.instance_ids());
        if m.is_empty() {
            log::warn!("alignment coverage: band {k} shares no instances with band {}", k - 1);
        }
        let mut rng = rng_for(config.seed, k as u64);
        let init = warm_start(x, &positions[k - 1], &m, k, config, &mut rng);
        positions.push(init);
        matchings.push(m);
    }
    let ps = snapshots
        .iter()
        .map(|(_, x)| affinities(x, config.perplexity))
        .collect::<Result<Vec<_>, _>>()?;
    let chains = build_chains(snapshots, &matchings, config.lambda_align);

    let mut bands: Vec<FreeBand<'_>> = ps
        .iter()
        .zip(positions)
        .enumerate()
        .map(|(k, (p, pos))| FreeBand { p, band: k, pos })
        .collect();
    optimize::run(&mut bands, &chains, config, observer);

    let shift = bands[0].pos.iter().map(|p| p[1]).sum::<f64>() / bands[0].pos.len() as f64;
    let out: Vec<BandLayout> = bands
        .iter()
        .zip(snapshots)
        .enumerate()
        .map(|(k, (band, (it, x)))| {
            let pos: Vec<Point2> = band.pos.iter().map(|p| [p[0], p[1] - shift]).collect();
            make_band(k, *it, x, &pos, config)
        })
        .collect();
    let iterations: Vec<u64> = snapshots.iter().map(|(it, _)| *it).collect();
    Ok(EvolutionLayout {
        config: config.clone(),
        config_hash: config_hash(config, &iterations),
        frozen_upto: frozen_upto(config, out.len() - 1),
        bands: out,
    })
}

/// Chains of instances that appear in consecutive bands. `matchings[k]` pairs
/// band `k` with band `k - 1`; `matchings[0]` is unused.
fn build_chains(
    snapshots: &[(u64, &FeatureMatrix)],
    matchings: &[Matching],
    lambda: f64,
) -> Vec<Chain> {
    if lambda == 0.0 {
        return Vec::new();
    }
    let nb = snapshots.len();
    let mut succ: Vec<Vec<Option<usize>>> =
        snapshots.iter().map(|(_, x)| vec![None; x.rows()]).collect();
    let mut has_pred: Vec<Vec<bool>> = snapshots.iter().map(|(_, x)| vec![false; x.rows()]).collect();
    for k in 1..nb {
        for &(i, j) in &matchings[k].pairs {
            succ[k - 1][j] = Some(i);
            has_pred[k][i] = true;
        }
    }
    let mut chains = Vec::new();
    for k in 0..nb {
        for start in 0..snapshots[k].1.rows() {
            if has_pred[k][start] || succ[k][start].is_none() {
                continue;
            }
            let mut nodes = vec![(k, start)];
            let mut links = Vec::new();
            let (mut b, mut i) = (k, start);
            while let Some(next) = succ[b][i] {
                links.push(matchings[b + 1].weight(lambda));
                b += 1;
                i = next;
                nodes.push((b, i));
            }
            chains.push(Chain {
                nodes,
                links,
                anchor: None,
            });
        }
    }
    chains
}

/// Total objective of a layout against its snapshots: the sum of per-band KL
/// costs plus the alignment penalty between each pair of consecutive bands.
pub fn evolution_cost(
    snapshots: &[(u64, &FeatureMatrix)],
    layout: &EvolutionLayout,
) -> Result<f64, EmbedError> {
    if snapshots.len() != layout.bands.len() {
        return Err(EmbedError::Input(format!(
            "{} snapshots for {} bands",
            snapshots.len(),
            layout.bands.len()
        )));
    }
    let mut total = 0.0;
    for (k, ((_, x), band)) in snapshots.iter().zip(&layout.bands).enumerate() {
        if band.instance_ids() != x.instance_ids() {
            return Err(EmbedError::Input(format!(
                "band {k} instance order differs from its snapshot"
            )));
        }
        let p = affinities(x, layout.config.perplexity)?;
        let pos = band.positions();
        total += kl_cost_unchecked(&p, &pos);
        if k > 0 {
            let prev = &layout.bands[k - 1];
            let m = Matching::by_id(x.instance_ids(), &prev.instance_ids());
            total += penalty_indexed(&pos, &prev.positions(), &m, layout.config.lambda_align);
        }
    }
    Ok(total)
}

//! Registration quality metrics: per-label and mean Dice, folding fraction,
//! and CSV evaluation reports.

use std::collections::BTreeMap;

use crate::dataset::{LabelMap, RegistrationSample};
use crate::deform::{exponentiate, folding_fraction_of_displacement, warp_image, warp_labels, EXP_STEPS};
use crate::error::{Error, Result};
use crate::loss::mse;
use crate::network::Network;
use crate::params::ParameterSet;
use crate::tape::Tape;

#[derive(Debug, Clone)]
pub struct DiceScores {
    /// ascending by label; only labels present in at least one map
    pub per_label: Vec<(u16, f64)>,
    /// equal-weight mean over `per_label`
    pub mean: f64,
}

/// Per-label Dice `2|A∩B| / (|A|+|B|)` over the requested labels. Labels
/// absent from both maps are excluded from the mean; labels present in
/// exactly one map score 0.
pub fn dice(a: &LabelMap, b: &LabelMap, labels: &[u16]) -> Result<DiceScores> {
    if a.spatial() != b.spatial() {
        return Err(Error::shape_mismatch("label maps", a.spatial(), b.spatial()));
    }
    let mut counts: BTreeMap<u16, (usize, usize, usize)> = BTreeMap::new();
    for &l in labels {
        counts.insert(l, (0, 0, 0));
    }
    for (&va, &vb) in a.data().iter().zip(b.data()) {
        if let Some(c) = counts.get_mut(&va) {
            c.0 += 1;
        }
        if let Some(c) = counts.get_mut(&vb) {
            c.1 += 1;
        }
        if va == vb {
            if let Some(c) = counts.get_mut(&va) {
                c.2 += 1;
            }
        }
    }
    let mut per_label = Vec::new();
    let mut sum = 0.0;
    for (&l, &(ca, cb, inter)) in &counts {
        if ca == 0 && cb == 0 {
            continue;
        }
        let score = 2.0 * inter as f64 / (ca + cb) as f64;
        per_label.push((l, score));
        sum += score;
    }
    if per_label.is_empty() {
        return Err(Error::Config(
            "no requested label present in either map".into(),
        ));
    }
    let mean = sum / per_label.len() as f64;
    Ok(DiceScores { per_label, mean })
}

/// Dice over the union of nonzero labels found in either map.
pub fn dice_auto(a: &LabelMap, b: &LabelMap) -> Result<DiceScores> {
    let mut labels = a.labels();
    for l in b.labels() {
        if !labels.contains(&l) {
            labels.push(l);
        }
    }
    labels.sort_unstable();
    dice(a, b, &labels)
}

#[derive(Debug, Clone)]
pub struct EvalRow {
    pub pair_id: String,
    pub mean_dice: f64,
    /// negative-Jacobian fraction in [0,1]
    pub fold_fraction: f64,
    pub per_label: Vec<(u16, f64)>,
    /// mean squared error of the warped moving image vs the fixed image;
    /// not part of the CSV schema, kept for experiment summaries
    pub warped_mse: f64,
}

/// Forward pass, optional exponentiation, label warp, Dice and folding.
pub fn evaluate_pair(
    net: &Network,
    params: &ParameterSet<f32>,
    sample: &RegistrationSample,
    pair_id: &str,
) -> Result<EvalRow> {
    sample.validate()?;
    let mut tape = Tape::<f32>::new();
    let pair = sample.input_pair();
    let (field_node, _) = net.forward(&mut tape, params, &pair)?;
    let field = tape.value(field_node).clone();
    let disp = if net.diffeomorphic() {
        exponentiate(&field, EXP_STEPS)?
    } else {
        field
    };
    let warped_labels = LabelMap::new(
        sample.spatial().to_vec(),
        warp_labels(sample.moving_labels.data(), &disp)?,
    )?;
    let warped = warp_image(&sample.moving, &disp)?;
    let scores = dice_auto(&warped_labels, &sample.fixed_labels)?;
    Ok(EvalRow {
        pair_id: pair_id.to_string(),
        mean_dice: scores.mean,
        fold_fraction: folding_fraction_of_displacement(&disp)?,
        per_label: scores.per_label,
        warped_mse: mse(&warped, &sample.fixed)? as f64,
    })
}

#[derive(Debug, Clone, Default)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl EvalReport {
    pub fn aggregate_dice(&self) -> (f64, f64) {
        mean_std(&self.rows.iter().map(|r| r.mean_dice).collect::<Vec<_>>())
    }

    pub fn aggregate_fold(&self) -> (f64, f64) {
        mean_std(&self.rows.iter().map(|r| r.fold_fraction).collect::<Vec<_>>())
    }

    /// `pair_id,mean_dice,fold_pct,label_<k>_dice...` rows and a final
    /// `aggregate` line with mean±std for the numeric columns. Folding is
    /// reported as a percentage.
    pub fn to_csv(&self) -> Result<String> {
        if self.rows.is_empty() {
            return Err(Error::EmptyDataset("no evaluation rows".into()));
        }
        let mut labels: Vec<u16> = Vec::new();
        for row in &self.rows {
            for &(l, _) in &row.per_label {
                if !labels.contains(&l) {
                    labels.push(l);
                }
            }
        }
        labels.sort_unstable();
        let mut out = String::from("pair_id,mean_dice,fold_pct");
        for l in &labels {
            out.push_str(&format!(",label_{l}_dice"));
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!(
                "{},{:.6},{:.6}",
                row.pair_id,
                row.mean_dice,
                row.fold_fraction * 100.0
            ));
            for l in &labels {
                match row.per_label.iter().find(|(rl, _)| rl == l) {
                    Some((_, s)) => out.push_str(&format!(",{s:.6}")),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        let (dm, ds) = self.aggregate_dice();
        let (fm, fs) = self.aggregate_fold();
        out.push_str(&format!(
            "aggregate,{dm:.6}±{ds:.6},{:.6}±{:.6}",
            fm * 100.0,
            fs * 100.0
        ));
        for l in &labels {
            let vals: Vec<f64> = self
                .rows
                .iter()
                .filter_map(|r| r.per_label.iter().find(|(rl, _)| rl == l).map(|&(_, s)| s))
                .collect();
            let (m, _) = mean_std(&vals);
            out.push_str(&format!(",{m:.6}"));
        }
        out.push('\n');
        Ok(out)
    }
}

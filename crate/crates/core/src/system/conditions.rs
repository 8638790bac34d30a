use crate::error::{Error, Result};
use crate::system::VelocityField;

/// Outcome of sampling the linear-growth and Lipschitz conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    /// `max |b(u; x)| / (1 + |u|)` over the grid and all states.
    pub growth_estimate: f64,
    /// `max |b(u; x) - b(u'; x)| / |u - u'|` over distinct grid pairs.
    pub lipschitz_estimate: f64,
    /// Growth condition against the field's constant; `None` if it has none.
    pub growth_holds: Option<bool>,
    pub lipschitz_holds: Option<bool>,
    /// Region actually sampled (clipped to the field's invariant box if any).
    pub region: Vec<(f64, f64)>,
    /// True when the field is only certified on its invariant box.
    pub domain_restricted: bool,
}

impl ConditionReport {
    pub fn growth_ok(&self) -> bool {
        self.growth_holds.unwrap_or(false)
    }

    pub fn lipschitz_ok(&self) -> bool {
        self.lipschitz_holds.unwrap_or(false)
    }
}

/// Samples both conditions on a tensor grid over `region` with
/// `points_per_axis` points per coordinate.
pub fn check_conditions(
    field: &VelocityField,
    region: &[(f64, f64)],
    points_per_axis: usize,
) -> Result<ConditionReport> {
    let dim = field.dim();
    if region.len() != dim {
        return Err(Error::Dimension(format!(
            "sampling region has {} axes, field has dimension {dim}",
            region.len()
        )));
    }
    if points_per_axis < 2 {
        return Err(Error::InvalidArgument("grid needs at least 2 points per axis".into()));
    }
    let domain = field.domain();
    let mut clipped = region.to_vec();
    if let Some(dom) = &domain {
        for (r, d) in clipped.iter_mut().zip(dom) {
            r.0 = r.0.max(d.0);
            r.1 = r.1.min(d.1);
        }
    }
    if clipped.iter().any(|&(lo, hi)| lo > hi || !lo.is_finite() || !hi.is_finite()) {
        return Err(Error::InvalidArgument(format!("empty or unbounded sampling region {clipped:?}")));
    }

    let axes: Vec<Vec<f64>> = clipped
        .iter()
        .map(|&(lo, hi)| {
            let m = points_per_axis - 1;
            (0..=m).map(|k| lo + (hi - lo) * k as f64 / m as f64).collect()
        })
        .collect();
    let total = axes.iter().map(Vec::len).product::<usize>();
    let points: Vec<Vec<f64>> = (0..total)
        .map(|mut idx| {
            axes.iter()
                .map(|axis| {
                    let v = axis[idx % axis.len()];
                    idx /= axis.len();
                    v
                })
                .collect()
        })
        .collect();

    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let mut growth = 0.0_f64;
    let mut lipschitz = 0.0_f64;
    for x in 0..field.n_states() {
        let values: Vec<Vec<f64>> = points.iter().map(|u| field.eval(u, x)).collect();
        for (u, b) in points.iter().zip(&values) {
            growth = growth.max(norm(b) / (1.0 + norm(u)));
        }
        for i in 0..points.len() {
            for j in i + 1..points.len() {
                let du: Vec<f64> = points[i].iter().zip(&points[j]).map(|(a, b)| a - b).collect();
                let dist = norm(&du);
                if dist == 0.0 {
                    continue;
                }
                let db: Vec<f64> = values[i].iter().zip(&values[j]).map(|(a, b)| a - b).collect();
                lipschitz = lipschitz.max(norm(&db) / dist);
            }
        }
    }

    let holds = |est: f64, declared: Option<f64>| declared.map(|c| est <= c * (1.0 + 1e-9) + 1e-12);
    Ok(ConditionReport {
        growth_estimate: growth,
        lipschitz_estimate: lipschitz,
        growth_holds: holds(growth, field.growth_constant()),
        lipschitz_holds: holds(lipschitz, field.lipschitz_constant()),
        region: clipped,
        domain_restricted: domain.is_some(),
    })
}

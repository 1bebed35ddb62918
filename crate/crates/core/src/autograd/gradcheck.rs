//! Central finite-difference checks for tape gradients.

use super::{Graph, NodeId, Tensor, TensorError};

/// Probe step for central differences.
pub const DEFAULT_STEP: f64 = 1e-5;

/// `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂)`, zero when both vectors vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Central-difference gradient of `f` with respect to `values[which]`,
/// probing only the flat positions in `coords` (all positions when `None`).
pub fn numeric_gradient<F>(
    values: &[Tensor],
    which: usize,
    coords: Option<&[usize]>,
    step: f64,
    mut f: F,
) -> Vec<f64>
where
    F: FnMut(&[Tensor]) -> f64,
{
    let mut work = values.to_vec();
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..values[which].numel()).collect();
            &all
        }
    };
    coords
        .iter()
        .map(|&j| {
            let orig = work[which].data()[j];
            work[which].data_mut()[j] = orig + step;
            let up = f(&work);
            work[which].data_mut()[j] = orig - step;
            let down = f(&work);
            work[which].data_mut()[j] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    /// Relative error per input tensor.
    pub errors: Vec<f64>,
    /// Distance of the unperturbed point from the nearest relu kink or max-pool tie.
    pub kink_margin: f64,
}

impl CheckReport {
    pub fn max_error(&self) -> f64 {
        self.errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Compares tape gradients of a scalar built from `inputs` against central
/// differences for every element of every input.
pub fn check<F>(inputs: &[Tensor], step: f64, build: F) -> Result<CheckReport, TensorError>
where
    F: Fn(&mut Graph<'_>, &[NodeId]) -> Result<NodeId, TensorError>,
{
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.input(t.clone(), true)).collect();
    let loss = build(&mut g, &ids)?;
    let kink_margin = g.kink_margin();
    let grads = g.backward(loss)?;
    let eval = |vals: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = vals.iter().map(|t| g.input(t.clone(), false)).collect();
        let loss = build(&mut g, &ids).expect("build succeeded once already");
        g.value(loss).item()
    };
    let mut errors = Vec::with_capacity(inputs.len());
    for (i, id) in ids.iter().enumerate() {
        let analytic = grads
            .get(*id)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; inputs[i].numel()]);
        let numeric = numeric_gradient(inputs, i, None, step, eval);
        errors.push(relative_error(&analytic, &numeric));
    }
    Ok(CheckReport {
        errors,
        kink_margin,
    })
}

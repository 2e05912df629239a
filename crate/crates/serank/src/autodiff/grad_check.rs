use super::graph::{Graph, NodeId};
use super::tensor::Tensor;
use crate::error::Result;

/// One coordinate whose analytic and numeric derivatives disagree.
#[derive(Debug, Clone)]
pub struct GradCheckFailure {
    pub leaf: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Outcome of a finite-difference sweep over every coordinate of every
/// grad-requiring leaf.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub coords_checked: usize,
    pub failures: Vec<GradCheckFailure>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Mixed absolute/relative error: relative for large derivatives, absolute
/// below magnitude one, so near-zero gradients are not penalized for
/// finite-difference noise.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// Compare `backward` gradients of a scalar-valued graph function against
/// central finite differences `(f(x+h) - f(x-h)) / 2h`, coordinate by
/// coordinate. The builder runs once per probe on a fresh graph, so it must
/// be deterministic in its inputs. Callers pick smooth evaluation points;
/// relu kinks and pooling argmax ties within `h` of a probe will show up as
/// reported failures, not silent misses.
pub fn grad_check<F>(f: F, leaves: &[Tensor], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let eval = |points: &[Tensor]| -> Result<f64> {
        let mut graph = Graph::new();
        let ids: Vec<NodeId> = points.iter().map(|t| graph.leaf(t.clone())).collect();
        let out = f(&mut graph, &ids)?;
        Ok(graph.value(out).data()[0])
    };

    // Analytic gradients from one backward pass.
    let mut graph = Graph::new();
    let ids: Vec<NodeId> = leaves.iter().map(|t| graph.leaf(t.clone())).collect();
    let out = f(&mut graph, &ids)?;
    graph.backward(out)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .zip(leaves)
        .map(|(id, t)| {
            graph
                .grad(*id)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        coords_checked: 0,
        failures: Vec::new(),
    };

    for (li, leaf) in leaves.iter().enumerate() {
        if !leaf.requires_grad() {
            continue;
        }
        for coord in 0..leaf.numel() {
            let probe = |delta: f64| -> Result<f64> {
                let mut shifted: Vec<Tensor> = leaves.to_vec();
                shifted[li].data_mut()[coord] += delta;
                eval(&shifted)
            };
            let numeric = (probe(h)? - probe(-h)?) / (2.0 * h);
            let a = analytic[li][coord];
            let err = rel_err(a, numeric);
            report.coords_checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
            }
            if err > tol {
                report.failures.push(GradCheckFailure {
                    leaf: li,
                    index: coord,
                    analytic: a,
                    numeric,
                    rel_err: err,
                });
            }
        }
    }
    Ok(report)
}

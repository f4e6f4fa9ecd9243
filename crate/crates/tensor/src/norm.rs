//! Standardization over batch or instance statistics.

use std::ops::Range;

use ndarray::IxDyn;

use crate::var::{Array, Var};

/// Which axes the statistics are pooled over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatAxes {
    /// Per channel, over batch and space.
    Batch,
    /// Per sample and channel, over space.
    Instance,
}

/// Batch statistics of a [`Var::standardize`] call.
#[derive(Debug, Clone)]
pub struct GroupStats {
    pub mean: Vec<f64>,
    /// Biased variance.
    pub var: Vec<f64>,
    /// Elements per group.
    pub count: usize,
}

fn groups(shape: &[usize], axes: StatAxes) -> Vec<Vec<Range<usize>>> {
    let (n, c, plane) = (shape[0], shape[1], shape[2] * shape[3]);
    match axes {
        StatAxes::Batch => (0..c)
            .map(|ci| {
                (0..n)
                    .map(|ni| {
                        let start = (ni * c + ci) * plane;
                        start..start + plane
                    })
                    .collect()
            })
            .collect(),
        StatAxes::Instance => (0..n * c)
            .map(|g| std::iter::once(g * plane..(g + 1) * plane).collect())
            .collect(),
    }
}

impl Var {
    /// `(x - mean) / sqrt(var + eps)` per statistics group of an NCHW tensor.
    pub fn standardize(&self, axes: StatAxes, eps: f64) -> (Var, GroupStats) {
        let shape = self.shape().to_vec();
        assert_eq!(shape.len(), 4, "standardize expects NCHW, got {shape:?}");
        let x = self.value().as_standard_layout().into_owned();
        let xb = x.as_slice().unwrap();
        let groups = groups(&shape, axes);
        let count: usize = groups.first().map_or(0, |g| g.iter().map(|r| r.len()).sum());
        assert!(count > 0, "standardize over empty groups");

        let mut y = vec![0.0; xb.len()];
        let mut means = Vec::with_capacity(groups.len());
        let mut vars = Vec::with_capacity(groups.len());
        let mut inv_std = Vec::with_capacity(groups.len());
        for ranges in &groups {
            let mean = ranges.iter().flat_map(|r| &xb[r.clone()]).sum::<f64>() / count as f64;
            let var = ranges
                .iter()
                .flat_map(|r| &xb[r.clone()])
                .map(|v| (v - mean) * (v - mean))
                .sum::<f64>()
                / count as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for r in ranges {
                for i in r.clone() {
                    y[i] = (xb[i] - mean) * inv;
                }
            }
            means.push(mean);
            vars.push(var);
            inv_std.push(inv);
        }
        let y_saved = y.clone();
        let out = Array::from_shape_vec(IxDyn(&shape), y).unwrap();
        let stats = GroupStats {
            mean: means,
            var: vars,
            count,
        };
        let var = Var::from_op(
            out,
            vec![self.clone()],
            Box::new(move |g, _| {
                let g = g.as_standard_layout();
                let gb = g.as_slice().unwrap();
                let mut gx = vec![0.0; gb.len()];
                for (ranges, &inv) in groups.iter().zip(&inv_std) {
                    let mut g_mean = 0.0;
                    let mut gy_mean = 0.0;
                    for r in ranges {
                        for i in r.clone() {
                            g_mean += gb[i];
                            gy_mean += gb[i] * y_saved[i];
                        }
                    }
                    g_mean /= count as f64;
                    gy_mean /= count as f64;
                    for r in ranges {
                        for i in r.clone() {
                            gx[i] = inv * (gb[i] - g_mean - y_saved[i] * gy_mean);
                        }
                    }
                }
                vec![Some(Array::from_shape_vec(IxDyn(&shape), gx).unwrap())]
            }),
        );
        (var, stats)
    }
}

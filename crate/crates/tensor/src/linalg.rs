//! Batched matrix products and row softmax.

use ndarray::{Array3, Axis, Ix3, IxDyn};

use crate::var::{Array, Var};

fn as3(a: &Array) -> Array3<f64> {
    a.view()
        .into_dimensionality::<Ix3>()
        .expect("expected a rank-3 tensor")
        .to_owned()
}

fn bmm_raw(a: &Array3<f64>, b: &Array3<f64>) -> Array3<f64> {
    let (batch, m, k) = a.dim();
    let (batch_b, k_b, n) = b.dim();
    assert_eq!(batch, batch_b, "bmm batch mismatch");
    assert_eq!(k, k_b, "bmm inner dimension mismatch: {k} vs {k_b}");
    let mut out = Array3::zeros((batch, m, n));
    for i in 0..batch {
        out.index_axis_mut(Axis(0), i)
            .assign(&a.index_axis(Axis(0), i).dot(&b.index_axis(Axis(0), i)));
    }
    out
}

fn transpose3(a: &Array3<f64>) -> Array3<f64> {
    a.view().permuted_axes([0, 2, 1]).as_standard_layout().into_owned()
}

impl Var {
    /// `[B, M, K] × [B, K, N] → [B, M, N]`.
    pub fn bmm(&self, other: &Var) -> Var {
        let a = as3(self.value());
        let b = as3(other.value());
        let out = bmm_raw(&a, &b).into_dyn();
        Var::from_op(
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |g, needs| {
                let g = as3(g);
                vec![
                    needs[0].then(|| bmm_raw(&g, &transpose3(&b)).into_dyn()),
                    needs[1].then(|| bmm_raw(&transpose3(&a), &g).into_dyn()),
                ]
            }),
        )
    }

    /// Swaps the last two axes of a rank-3 tensor.
    pub fn transpose_last2(&self) -> Var {
        let out = transpose3(&as3(self.value())).into_dyn();
        Var::from_op(
            out,
            vec![self.clone()],
            Box::new(|g, _| vec![Some(transpose3(&as3(g)).into_dyn())]),
        )
    }

    /// Softmax along the last axis, max-shifted for stability.
    pub fn softmax_last(&self) -> Var {
        let last = self.shape().len() - 1;
        let mut y = self.value().as_standard_layout().into_owned();
        for mut lane in y.lanes_mut(Axis(last)) {
            let max = lane.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            lane.mapv_inplace(|v| (v - max).exp());
            let total = lane.sum();
            lane.mapv_inplace(|v| v / total);
        }
        let saved = y.clone();
        Var::from_op(
            y,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = Array::zeros(IxDyn(saved.shape()));
                for ((mut gl, yl), gyl) in gx
                    .lanes_mut(Axis(last))
                    .into_iter()
                    .zip(saved.lanes(Axis(last)))
                    .zip(g.lanes(Axis(last)))
                {
                    let dot: f64 = yl.iter().zip(gyl.iter()).map(|(a, b)| a * b).sum();
                    for ((o, &yv), &gv) in gl.iter_mut().zip(yl.iter()).zip(gyl.iter()) {
                        *o = yv * (gv - dot);
                    }
                }
                vec![Some(gx)]
            }),
        )
    }
}

//! Parameter containers.
//!
//! Gradients and optimizer moments reuse the parameter struct itself: a
//! gradient buffer is simply `params.zeros_like()`, so shapes can never drift
//! apart.

pub trait ParamSet {
    fn param_slices(&self) -> Vec<&[f64]>;
    fn param_slices_mut(&mut self) -> Vec<&mut [f64]>;
    fn zeros_like(&self) -> Self
    where
        Self: Sized;

    fn num_params(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    fn add_from(&mut self, other: &Self)
    where
        Self: Sized,
    {
        for (dst, src) in self.param_slices_mut().into_iter().zip(other.param_slices()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += *s;
            }
        }
    }

    fn scale(&mut self, factor: f64) {
        for s in self.param_slices_mut() {
            for v in s.iter_mut() {
                *v *= factor;
            }
        }
    }

    fn fill_zero(&mut self) {
        for s in self.param_slices_mut() {
            s.fill(0.0);
        }
    }

    fn all_finite(&self) -> bool {
        self.param_slices()
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }

    fn squared_norm(&self) -> f64 {
        self.param_slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|v| v * v)
            .sum()
    }

    /// Flatten into one vector, in slice order.
    fn to_flat(&self) -> Vec<f64> {
        self.param_slices().concat()
    }

    fn set_from_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for s in self.param_slices_mut() {
            let n = s.len();
            s.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        assert_eq!(offset, flat.len(), "flat parameter length mismatch");
    }
}

/// Sum a sequence of gradient buffers in order. The fixed order is what keeps
/// reductions bit-reproducible under parallel evaluation.
pub fn ordered_sum<P: ParamSet>(mut parts: Vec<P>) -> Option<P> {
    if parts.is_empty() {
        return None;
    }
    let mut acc = parts.remove(0);
    for p in &parts {
        acc.add_from(p);
    }
    Some(acc)
}

/// A fixed, ordered collection of parameter tensors.
///
/// Gradient containers implement this with the same tensor order as the
/// parameters they mirror, which is what lets [`Adam`](super::Adam) and the
/// finite-difference checker pair them up.
pub trait ParamSet {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn shapes(&self) -> Vec<usize> {
        self.tensors().iter().map(|t| t.len()).collect()
    }

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn to_flat(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    /// Overwrites every tensor from a flat vector in tensor order.
    ///
    /// # Panics
    /// If `flat` does not have exactly `num_params()` entries.
    fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "flat parameter length");
        let mut offset = 0;
        for t in self.tensors_mut() {
            let len = t.len();
            t.copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
    }
}

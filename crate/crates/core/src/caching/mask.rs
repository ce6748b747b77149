use super::router::{GateMatrix, Router};
use crate::error::{Error, Result};

/// Mask that disables cache reuse at a single step `t`.
///
/// Entries on row `t` are `1 / r_{t,i}`, everything else is 1, so the
/// element-wise product with the router gates turns row `t` into ones.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaskMatrix {
    t: usize,
}

impl MaskMatrix {
    pub fn new(router: &Router, t: usize) -> Result<Self> {
        if t == 0 || t > router.steps() {
            return Err(Error::IndexOutOfRange {
                what: "timestep",
                index: t,
                limit: router.steps(),
            });
        }
        Ok(Self { t })
    }

    pub fn t(&self) -> usize {
        self.t
    }

    /// Mask entry `M^(t)_{j,i}` for `router`.
    pub fn value(&self, router: &Router, j: usize, i: usize) -> Result<f64> {
        let r = router.gate(j, i)?;
        Ok(if j == self.t { 1.0 / r } else { 1.0 })
    }

    /// `router ⊙ M^(t)`. Row `t` is stored as exact ones rather than the
    /// rounded product `r · (1/r)`.
    pub fn apply(&self, router: &Router) -> GateMatrix {
        let gates = router.gates();
        let (steps, blocks, tau) = (gates.steps(), gates.blocks(), gates.tau());
        let mut values = gates.values().to_vec();
        values[(self.t - 1) * blocks..self.t * blocks].fill(1.0);
        GateMatrix::from_values(steps, blocks, tau, values).expect("masked gates stay in (0, 1]")
    }
}

/// Effective gates with caching disabled at step `t`; the router is not modified.
pub fn apply_mask(router: &Router, t: usize) -> Result<GateMatrix> {
    Ok(MaskMatrix::new(router, t)?.apply(router))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::caching::RouterInit;

    #[test]
    fn masked_row_is_ones_and_rest_unchanged() {
        let router = Router::random(5, 4, 0.1, RouterInit { mean: -1.0, std: 2.0 }, 3).unwrap();
        let gates = router.gates();
        for t in 1..=5 {
            let m = apply_mask(&router, t).unwrap();
            for j in 1..=5 {
                if j == t {
                    assert!(m.row(j).iter().all(|&v| v == 1.0));
                } else {
                    assert_eq!(m.row(j), gates.row(j));
                }
            }
        }
    }

    #[test]
    fn mask_entries_invert_the_row() {
        let router = Router::random(3, 2, 0.1, RouterInit::default(), 0).unwrap();
        let m = MaskMatrix::new(&router, 2).unwrap();
        for i in 0..2 {
            let prod = router.gate(2, i).unwrap() * m.value(&router, 2, i).unwrap();
            assert!((prod - 1.0).abs() < 1e-15);
            assert_eq!(m.value(&router, 1, i).unwrap(), 1.0);
        }
    }

    #[test]
    fn out_of_range() {
        let router = Router::constant(3, 2, 0.1, 0.0).unwrap();
        assert!(apply_mask(&router, 0).is_err());
        assert!(apply_mask(&router, 4).is_err());
    }
}

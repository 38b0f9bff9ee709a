use crate::autodiff::{Tape, Var};
use crate::blocks::msff::Msff;
use crate::error::{Error, Result};
use crate::nn::Conv2d;
use crate::param::{ParamBuilder, ParamId, ParamStore};
use crate::tensor::Element;

/// Differential fusion of two temporal feature maps.
#[derive(Clone, Debug)]
pub struct Mdfm {
    pub channels: usize,
    pub msff: Msff,
    pub fuse: Conv2d,
}

#[derive(Clone, Copy, Debug)]
pub struct MdfmTrace {
    /// `|x1 - x2|`
    pub diff: Var,
    /// `sigmoid(msff(diff))`, full resolution
    pub gate: Var,
    pub gated1: Var,
    pub gated2: Var,
    /// `diff + conv3x3(concat(gated1, gated2))`
    pub output: Var,
}

impl Mdfm {
    pub fn new<T: Element>(
        b: &mut ParamBuilder<'_, T>,
        name: &str,
        channels: usize,
    ) -> Result<Self> {
        b.scope(name, |b| {
            Ok(Mdfm {
                channels,
                msff: Msff::new(b, "msff", channels)?,
                fuse: Conv2d::new(b, "fuse", 2 * channels, channels, 3, 1, true)?,
            })
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.msff.params();
        p.extend(self.fuse.params());
        p
    }

    pub fn forward<T: Element>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x1: Var,
        x2: Var,
    ) -> Result<Var> {
        Ok(self.forward_traced(tape, store, x1, x2)?.output)
    }

    pub fn forward_traced<T: Element>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x1: Var,
        x2: Var,
    ) -> Result<MdfmTrace> {
        let (s1, s2) = (tape.shape(x1), tape.shape(x2));
        if s1 != s2 {
            return Err(Error::Shape(format!(
                "temporal features differ: {s1} vs {s2}"
            )));
        }
        let delta = tape.sub(x1, x2)?;
        let diff = tape.abs(delta);
        let ms = self.msff.forward(tape, store, diff)?;
        let gate = tape.sigmoid(ms);
        let gated1 = tape.mul(gate, x1)?;
        let gated2 = tape.mul(gate, x2)?;
        let stacked = tape.concat_c(&[gated1, gated2])?;
        let fused = self.fuse.forward(tape, store, stacked)?;
        let output = tape.add(diff, fused)?;
        Ok(MdfmTrace {
            diff,
            gate,
            gated1,
            gated2,
            output,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::{Shape, Tensor};

    fn setup() -> (ParamStore<f64>, Mdfm, Rng) {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(8);
        let block = Mdfm::new(&mut ParamBuilder::new(&mut store, &mut rng), "mdfm", 8).unwrap();
        (store, block, rng)
    }

    #[test]
    fn identical_inputs_have_zero_difference() {
        let (store, block, mut rng) = setup();
        let x = rng.normal_tensor::<f64>(Shape::new(1, 8, 6, 6), 1.0);
        let mut tape = Tape::new();
        let a = tape.constant(x.clone());
        let b = tape.constant(x);
        let t = block.forward_traced(&mut tape, &store, a, b).unwrap();
        assert!(tape.value(t.diff).data().iter().all(|&v| v == 0.0));
        // Output equals the same path evaluated with the difference forced to zero.
        let zero = tape.constant(Tensor::zeros(Shape::new(1, 8, 6, 6)));
        let ms = block.msff.forward(&mut tape, &store, zero).unwrap();
        let gate = tape.sigmoid(ms);
        let g1 = tape.mul(gate, a).unwrap();
        let g2 = tape.mul(gate, b).unwrap();
        let cat = tape.concat_c(&[g1, g2]).unwrap();
        let fused = block.fuse.forward(&mut tape, &store, cat).unwrap();
        let expected = tape.add(zero, fused).unwrap();
        assert_eq!(tape.value(t.output), tape.value(expected));
    }

    #[test]
    fn swap_exchanges_gated_features() {
        let (store, block, mut rng) = setup();
        let x1 = rng.normal_tensor::<f64>(Shape::new(2, 8, 4, 4), 1.0);
        let x2 = rng.normal_tensor::<f64>(Shape::new(2, 8, 4, 4), 1.0);
        let mut tape = Tape::new();
        let (a, b) = (tape.constant(x1), tape.constant(x2));
        let fwd = block.forward_traced(&mut tape, &store, a, b).unwrap();
        let rev = block.forward_traced(&mut tape, &store, b, a).unwrap();
        assert_eq!(tape.value(fwd.diff), tape.value(rev.diff));
        assert_eq!(tape.value(fwd.gate), tape.value(rev.gate));
        assert_eq!(tape.value(fwd.gated1), tape.value(rev.gated2));
        assert_eq!(tape.value(fwd.gated2), tape.value(rev.gated1));
        assert!(tape
            .value(fwd.gate)
            .data()
            .iter()
            .all(|&m| m > 0.0 && m < 1.0));
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let (store, block, _) = setup();
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(Shape::new(1, 8, 4, 4)));
        let b = tape.constant(Tensor::zeros(Shape::new(1, 8, 2, 2)));
        assert!(block.forward(&mut tape, &store, a, b).is_err());
    }
}

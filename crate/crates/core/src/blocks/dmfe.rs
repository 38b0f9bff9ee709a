use crate::autodiff::{Tape, Var};
use crate::blocks::msff::Msff;
use crate::blocks::ssfc::{PoolPair, Ssfc, ValueSource};
use crate::error::{Error, Result};
use crate::param::{ParamBuilder, ParamId, ParamStore};
use crate::tensor::Element;

/// Dual-branch extractor: first channel half through [`Msff`], second half
/// through [`Ssfc`], concatenated and added to the input.
#[derive(Clone, Debug)]
pub struct Dmfe {
    pub channels: usize,
    pub msff: Msff,
    pub ssfc: Ssfc,
}

impl Dmfe {
    pub fn new<T: Element>(
        b: &mut ParamBuilder<'_, T>,
        name: &str,
        channels: usize,
        pools: PoolPair,
        value_source: ValueSource,
    ) -> Result<Self> {
        if channels == 0 || !channels.is_multiple_of(4) {
            return Err(Error::Config(format!(
                "dual-branch block needs channels divisible by 4, got {channels}"
            )));
        }
        let half = channels / 2;
        b.scope(name, |b| {
            Ok(Dmfe {
                channels,
                msff: Msff::new(b, "msff", half)?,
                ssfc: Ssfc::new(b, "ssfc", half, pools, value_source)?,
            })
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.msff.params();
        p.extend(self.ssfc.params());
        p
    }

    pub fn forward<T: Element>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let half = self.channels / 2;
        let parts = tape.split_c(x, &[half, half])?;
        let local = self.msff.forward(tape, store, parts[0])?;
        let global = self.ssfc.forward(tape, store, parts[1])?;
        let cat = tape.concat_c(&[local, global])?;
        tape.add(cat, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::Shape;

    #[test]
    fn zero_weights_give_identity() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = Rng::new(3);
        let block = Dmfe::new(
            &mut ParamBuilder::new(&mut store, &mut rng),
            "dmfe",
            16,
            PoolPair::DEFAULT,
            ValueSource::Projection,
        )
        .unwrap();
        for p in store.iter_mut() {
            p.value.fill(0.0);
        }
        let x = rng.normal_tensor::<f64>(Shape::new(2, 16, 8, 8), 1.0);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let y = block.forward(&mut tape, &store, xv).unwrap();
        assert_eq!(tape.value(y), &x);
    }

    #[test]
    fn preserves_shape() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = Rng::new(3);
        let block = Dmfe::new(
            &mut ParamBuilder::new(&mut store, &mut rng),
            "dmfe",
            16,
            PoolPair::DEFAULT,
            ValueSource::Projection,
        )
        .unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(rng.normal_tensor(Shape::new(2, 16, 32, 32), 1.0));
        let y = block.forward(&mut tape, &store, x).unwrap();
        assert_eq!(tape.shape(y), Shape::new(2, 16, 32, 32));
    }
}

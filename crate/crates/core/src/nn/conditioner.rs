use rand::RngCore;

use super::conv::Conv2dLayer;
use super::registry::ParamRegistry;
use crate::error::Result;
use crate::tensor::{DType, Tensor};

pub const LEAKY_SLOPE: f64 = 0.01;

/// Three dilated circular convolutions (dilations 1, 2, 3) with leaky ReLU
/// between them. The last layer starts at zero, so a fresh network outputs
/// zeros for any input.
#[derive(Clone, Debug)]
pub struct Conditioner {
    pub convs: Vec<Conv2dLayer>,
}

impl Conditioner {
    pub fn new(
        in_channels: usize,
        hidden: usize,
        out_channels: usize,
        dtype: DType,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        Ok(Conditioner {
            convs: vec![
                Conv2dLayer::new(in_channels, hidden, 1, dtype, rng)?,
                Conv2dLayer::new(hidden, hidden, 2, dtype, rng)?,
                Conv2dLayer::zeros(hidden, out_channels, 3, dtype)?,
            ],
        })
    }

    pub fn in_channels(&self) -> usize {
        self.convs[0].in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.convs[self.convs.len() - 1].out_channels
    }

    /// `[B, in, L, L]` to `[B, out, L, L]`.
    pub fn forward(&self, features: &Tensor) -> Result<Tensor> {
        let mut h = features.clone();
        let last = self.convs.len() - 1;
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(&h)?;
            if i < last {
                h = h.leaky_relu(LEAKY_SLOPE);
            }
        }
        Ok(h)
    }

    /// Registers weights and biases as `{prefix}.conv{j}.{weight|bias}`.
    pub fn register(&self, prefix: &str, reg: &mut ParamRegistry) -> Result<()> {
        for (j, c) in self.convs.iter().enumerate() {
            reg.insert(format!("{prefix}.conv{j}.weight"), c.weight.clone())?;
            reg.insert(format!("{prefix}.conv{j}.bias"), c.bias.clone())?;
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.convs.iter().map(|c| c.weight.numel() + c.bias.numel()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn input(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec((0..n).map(|_| rng.random_range(-1.0..1.0)).collect(), shape, DType::Double).unwrap()
    }

    #[test]
    fn fresh_network_outputs_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Conditioner::new(6, 8, 23, DType::Double, &mut rng).unwrap();
        let y = net.forward(&input(&mut rng, &[2, 6, 4, 4])).unwrap();
        assert_eq!(y.shape(), &[2, 23, 4, 4]);
        assert!(y.to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_permutation_permutes_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = Conditioner::new(2, 4, 3, DType::Double, &mut rng).unwrap();
        net.convs[2] = Conv2dLayer::new(4, 3, 3, DType::Double, &mut rng).unwrap();
        let x = input(&mut rng, &[3, 2, 4, 4]);
        let perm = [2, 0, 1];
        let a = net.forward(&x.index_select(0, &perm).unwrap()).unwrap();
        let b = net.forward(&x).unwrap().index_select(0, &perm).unwrap();
        assert_eq!(a.to_vec(), b.to_vec());
    }

    #[test]
    fn receptive_field_is_local() {
        // Dilations 1 + 2 + 3 reach at most 6 sites along each axis.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = Conditioner::new(1, 3, 1, DType::Double, &mut rng).unwrap();
        net.convs[2] = Conv2dLayer::new(3, 1, 3, DType::Double, &mut rng).unwrap();
        let l = 16;
        let x = input(&mut rng, &[1, 1, l, l]);
        let base = net.forward(&x).unwrap().to_vec();
        let mut v = x.to_vec();
        v[0] += 0.5;
        let y = net.forward(&Tensor::from_vec(v, &[1, 1, l, l], DType::Double).unwrap()).unwrap().to_vec();
        for r in 0..l {
            for c in 0..l {
                let dr = r.min(l - r);
                let dc = c.min(l - c);
                if dr > 6 || dc > 6 {
                    assert_eq!(y[r * l + c], base[r * l + c], "site ({r},{c})");
                }
            }
        }
        assert_ne!(y[0], base[0]);
    }
}

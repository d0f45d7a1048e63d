use crate::error::{Error, Result};
use crate::frame::Image;

/// Differentiable map from a rendered image to a model's input space.
pub trait Encoder: Sync {
    fn encode(&self, x: &Image) -> Result<Image>;
    /// Vector-Jacobian product: pull a latent gradient back to pixels.
    fn vjp(&self, x: &Image, grad_z: &Image) -> Result<Image>;
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct IdentityEncoder;

impl Encoder for IdentityEncoder {
    fn encode(&self, x: &Image) -> Result<Image> {
        Ok(x.clone())
    }

    fn vjp(&self, _x: &Image, grad_z: &Image) -> Result<Image> {
        Ok(grad_z.clone())
    }
}

/// Box-average pooling by an integer factor from a fixed input size.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AvgPoolEncoder {
    pub factor: usize,
    pub input: (usize, usize),
}

impl AvgPoolEncoder {
    pub fn new(factor: usize, input: (usize, usize)) -> Result<Self> {
        if factor == 0 || input.0 % factor != 0 || input.1 % factor != 0 {
            return Err(Error::config("pooling factor must divide the input resolution"));
        }
        Ok(Self { factor, input })
    }

    pub fn latent_resolution(&self) -> (usize, usize) {
        (self.input.0 / self.factor, self.input.1 / self.factor)
    }

    fn check(&self, x: &Image) -> Result<()> {
        if (x.width, x.height) != self.input {
            return Err(Error::config(format!(
                "encoder expects {}x{} input, got {}x{}",
                self.input.0, self.input.1, x.width, x.height
            )));
        }
        Ok(())
    }
}

impl Encoder for AvgPoolEncoder {
    fn encode(&self, x: &Image) -> Result<Image> {
        self.check(x)?;
        Ok(x.downsample(self.factor))
    }

    fn vjp(&self, x: &Image, grad_z: &Image) -> Result<Image> {
        self.check(x)?;
        let f = self.factor;
        let (zw, zh) = self.latent_resolution();
        if (grad_z.width, grad_z.height, grad_z.channels) != (zw, zh, x.channels) {
            return Err(Error::config("latent gradient has the wrong shape"));
        }
        let c = x.channels;
        let k = 1.0 / (f * f) as f64;
        let mut out = Image::zeros(x.width, x.height, c);
        for j in 0..x.height {
            for i in 0..x.width {
                let src = ((j / f) * zw + i / f) * c;
                let dst = (j * x.width + i) * c;
                for ch in 0..c {
                    out.data[dst + ch] = grad_z.data[src + ch] * k;
                }
            }
        }
        Ok(out)
    }
}

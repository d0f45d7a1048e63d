use std::fmt;

use crate::error::Result;
use crate::frame::Image;

/// Camera metadata passed along with a denoiser call. It is not a
/// conditioning signal; priors that depend on the viewpoint read it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ViewHint {
    pub azimuth: f64,
    pub index: Option<usize>,
}

/// Conditioning inputs for one denoiser call.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConditionSet {
    /// Opaque text-embedding token.
    pub text: Option<u64>,
    /// Opaque image-condition token.
    pub image: Option<u64>,
    /// Low-resolution conditioning image for super-resolution priors.
    pub low_res: Option<Image>,
    pub view: Option<ViewHint>,
}

impl ConditionSet {
    pub fn text(id: u64) -> Self {
        Self {
            text: Some(id),
            ..Default::default()
        }
    }

    pub fn with_image(mut self, id: u64) -> Self {
        self.image = Some(id);
        self
    }

    pub fn with_view(mut self, view: ViewHint) -> Self {
        self.view = Some(view);
        self
    }

    /// The unconditional input. Prompts are dropped; the view hint and a
    /// super-resolution prior's low-resolution image are kept.
    pub fn null(&self) -> Self {
        Self {
            view: self.view,
            low_res: self.low_res.clone(),
            ..Default::default()
        }
    }

    /// Text only, dropping the image condition.
    pub fn text_only(&self) -> Self {
        Self {
            image: None,
            ..self.clone()
        }
    }

    pub fn is_null(&self) -> bool {
        self.text.is_none() && self.image.is_none()
    }

    /// Identifier used on the external denoiser wire: 0 for the null
    /// condition, otherwise the text token with the top bit flagging an
    /// image condition.
    pub fn wire_id(&self) -> u64 {
        if self.is_null() {
            return 0;
        }
        let base = self.text.unwrap_or(0) & !(1 << 63);
        if self.image.is_some() {
            base | 1 << 63
        } else {
            base.max(1)
        }
    }
}

/// A noise-prediction network `eps(x_t; y, t)`.
pub trait GuidanceModel: Sync {
    fn denoise(&self, x_t: &Image, cond: &ConditionSet, t: f64) -> Result<Image>;

    /// `(width, height)` of the images the model expects.
    fn native_resolution(&self) -> (usize, usize);

    /// Whether the model acts on encoder latents rather than pixels.
    fn is_latent(&self) -> bool {
        false
    }

    /// Whether the model wants a low-resolution render as conditioning.
    fn wants_low_res(&self) -> bool {
        false
    }
}

impl fmt::Debug for dyn GuidanceModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (w, h) = self.native_resolution();
        write!(f, "GuidanceModel({w}x{h})")
    }
}

use serde::{Deserialize, Serialize};

use super::model::{ConditionSet, GuidanceModel};
use crate::error::{Error, Result};
use crate::frame::Image;

/// How conditional and unconditional predictions are combined.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Guidance {
    /// `eps(0) + w (eps(y) - eps(0))`.
    Standard { weight: f64 },
    /// Text and joint text+image terms; the joint term only applies for
    /// `t < image_threshold`.
    Extended {
        text_weight: f64,
        joint_weight: f64,
        image_threshold: f64,
    },
}

impl Default for Guidance {
    fn default() -> Self {
        Guidance::Standard { weight: 100.0 }
    }
}

impl Guidance {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Guidance::Standard { weight } => weight.is_finite(),
            Guidance::Extended {
                text_weight,
                joint_weight,
                image_threshold,
            } => text_weight.is_finite() && joint_weight.is_finite() && (0.0..=1.0).contains(&image_threshold),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config("guidance weights must be finite and the threshold in [0, 1]"))
        }
    }
}

/// Weighted sum of predictions, skipping zero-weight terms so that special
/// cases reproduce their single-term counterparts bit for bit.
fn combine(terms: &[(f64, &Image)]) -> Image {
    let live: Vec<&(f64, &Image)> = terms.iter().filter(|(w, _)| *w != 0.0).collect();
    let Some(first) = live.first() else {
        return Image {
            data: vec![0.0; terms[0].1.data.len()],
            ..terms[0].1.clone()
        };
    };
    let mut out = first.1.clone();
    if first.0 != 1.0 {
        out.data.iter_mut().for_each(|v| *v *= first.0);
    }
    for (w, img) in &live[1..] {
        for (o, v) in out.data.iter_mut().zip(&img.data) {
            *o += w * v;
        }
    }
    out
}

/// Classifier-free guidance, written as `(1 - w) eps(0) + w eps(y)`.
pub fn cfg_combine(model: &dyn GuidanceModel, x_t: &Image, cond: &ConditionSet, t: f64, weight: f64) -> Result<Image> {
    let e_cond = if weight != 0.0 { Some(model.denoise(x_t, cond, t)?) } else { None };
    let e_null = if weight != 1.0 { Some(model.denoise(x_t, &cond.null(), t)?) } else { None };
    let mut terms = Vec::with_capacity(2);
    if let Some(e) = &e_null {
        terms.push((1.0 - weight, e));
    }
    if let Some(e) = &e_cond {
        terms.push((weight, e));
    }
    Ok(combine(&terms))
}

/// Extended guidance with separate text and joint text+image weights.
#[allow(clippy::too_many_arguments)]
pub fn cfg_combine_extended(
    model: &dyn GuidanceModel,
    x_t: &Image,
    cond: &ConditionSet,
    t: f64,
    text_weight: f64,
    joint_weight: f64,
    image_threshold: f64,
) -> Result<Image> {
    if joint_weight != 0.0 && cond.image.is_none() {
        return Err(Error::config("joint guidance weight set without an image condition"));
    }
    let text = cond.text_only();
    if joint_weight == 0.0 || t >= image_threshold {
        return cfg_combine(model, x_t, &text, t, text_weight);
    }
    let e_text = if text_weight != 0.0 { Some(model.denoise(x_t, &text, t)?) } else { None };
    let e_joint = model.denoise(x_t, cond, t)?;
    let null_w = 1.0 - text_weight - joint_weight;
    let e_null = if null_w != 0.0 { Some(model.denoise(x_t, &cond.null(), t)?) } else { None };
    let mut terms = Vec::with_capacity(3);
    if let Some(e) = &e_null {
        terms.push((null_w, e));
    }
    if let Some(e) = &e_text {
        terms.push((text_weight, e));
    }
    terms.push((joint_weight, &e_joint));
    Ok(combine(&terms))
}

/// Dispatch on a guidance rule.
pub fn guided_eps(model: &dyn GuidanceModel, x_t: &Image, cond: &ConditionSet, t: f64, g: &Guidance) -> Result<Image> {
    match *g {
        Guidance::Standard { weight } => cfg_combine(model, x_t, cond, t, weight),
        Guidance::Extended {
            text_weight,
            joint_weight,
            image_threshold,
        } => cfg_combine_extended(model, x_t, cond, t, text_weight, joint_weight, image_threshold),
    }
}

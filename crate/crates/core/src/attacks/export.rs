//! Trace CSVs, portable any-map images and raw JSON arrays.

use std::fmt::Write as _;
use std::path::Path;

use serde_json::json;

use crate::attacks::config::AttackResult;
use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

/// `step,mean_surrogate_loss,grad_l1` (or `step,mean_cosine` for embedding
/// attacks). Row 0 is the starting point.
pub fn trace_csv(result: &AttackResult, embedding: bool) -> String {
    let mut out = String::new();
    if embedding {
        out.push_str("step,mean_cosine\n");
        let _ = writeln!(out, "0,{}", result.initial_trace);
        for (t, v) in result.trace.iter().enumerate() {
            let _ = writeln!(out, "{},{}", t + 1, v);
        }
    } else {
        out.push_str("step,mean_surrogate_loss,grad_l1\n");
        let _ = writeln!(out, "0,{},", result.initial_trace);
        for (t, v) in result.trace.iter().enumerate() {
            let g = result.grad_stats.get(t).map(|g| g.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{}", t + 1, v, g);
        }
    }
    out
}

/// Binary PGM (one channel) or PPM (three channels); values are clamped to
/// `[0, 1]` and quantized to 8 bits.
pub fn to_pnm(image: &ImageTensor) -> Result<Vec<u8>> {
    let s = image.shape();
    let plane = s.height * s.width;
    let magic = match s.channels {
        1 => "P5",
        3 => "P6",
        c => {
            return Err(Error::Capability(format!(
                "portable any-map export needs 1 or 3 channels, got {c}"
            )))
        }
    };
    let mut out = format!("{magic}\n{} {}\n255\n", s.width, s.height).into_bytes();
    let data = image.as_slice();
    for p in 0..plane {
        for c in 0..s.channels {
            let v = data[c * plane + p].clamp(0.0, 1.0);
            out.push((v * 255.0).round() as u8);
        }
    }
    Ok(out)
}

/// `adv − x_nat + 0.5`, the usual way to make a perturbation visible.
pub fn perturbation_image(adv: &ImageTensor, x_nat: &ImageTensor) -> Result<ImageTensor> {
    adv.zip_map(x_nat, |a, n| a - n + 0.5)
}

pub fn write_pnm(image: &ImageTensor, path: &Path) -> Result<()> {
    std::fs::write(path, to_pnm(image)?)?;
    Ok(())
}

pub fn tensor_json(image: &ImageTensor) -> serde_json::Value {
    let s = image.shape();
    json!({
        "shape": [s.channels, s.height, s.width],
        "data": image.as_slice(),
    })
}

use crate::error::{shape_err, Result};
use crate::tensor::ImageTensor;

/// A scalar image loss against a fixed target, with its gradient w.r.t. the
/// input image.
pub trait ImageLoss {
    fn evaluate(&self, img: &ImageTensor) -> Result<(f32, Vec<f32>)>;
}

/// Mean squared pixel error.
#[derive(Debug, Clone)]
pub struct PixelL2 {
    pub target: ImageTensor,
}

impl PixelL2 {
    pub fn new(target: ImageTensor) -> Self {
        Self { target }
    }
}

pub(crate) fn mse_and_grad(img: &ImageTensor, target: &ImageTensor) -> Result<(f32, Vec<f32>)> {
    if !img.same_shape(target) {
        return Err(shape_err(format!("image {:?} vs target {:?}", img.shape(), target.shape())));
    }
    let n = img.data.len() as f32;
    let mut loss = 0.0f64;
    let grad = img
        .data
        .iter()
        .zip(&target.data)
        .map(|(a, b)| {
            let d = a - b;
            loss += (d as f64) * (d as f64);
            2.0 * d / n
        })
        .collect();
    Ok(((loss / n as f64) as f32, grad))
}

impl ImageLoss for PixelL2 {
    fn evaluate(&self, img: &ImageTensor) -> Result<(f32, Vec<f32>)> {
        mse_and_grad(img, &self.target)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_value_and_gradient() {
        let t = ImageTensor::filled(1, 1, 2, 0.0);
        let x = ImageTensor::new(1, 1, 2, vec![1.0, -3.0]).unwrap();
        let (l, g) = PixelL2::new(t.clone()).evaluate(&x).unwrap();
        assert_eq!(l, 5.0);
        assert_eq!(g, vec![1.0, -3.0]);
        let (l0, g0) = PixelL2::new(t.clone()).evaluate(&t).unwrap();
        assert_eq!(l0, 0.0);
        assert!(g0.iter().all(|&v| v == 0.0));
        assert!(PixelL2::new(t).evaluate(&ImageTensor::filled(1, 2, 2, 0.0)).is_err());
    }
}

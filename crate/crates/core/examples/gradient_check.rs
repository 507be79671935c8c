//! Reverse-mode gradients of conv -> scaled softmax -> 1x1 conv -> spatial
//! NLL, compared against central finite differences; then the full gradient
//! check of the small three-joint model.
//!
//! cargo run --release --example gradient_check

use crfcnn::ops;
use crfcnn::tape::Tape;
use crfcnn::verify::{gradcheck, gradcheck_config};
use crfcnn::{ConvKernel, Tensor};

fn main() -> crfcnn::Result<()> {
    let x = Tensor::from_fn(&[2, 5, 5], |i| ((i * 7) % 11) as f64 / 11.0 - 0.5);
    let w = Tensor::from_fn(&[3, 2, 3, 3], |i| ((i * 5) % 13) as f64 / 13.0 - 0.5);
    let head = ConvKernel::new(Tensor::new(vec![1, 3, 1, 1], vec![1.0, -2.0, 0.5])?, None)?;
    let target = 12;

    let loss_of = |w: &Tensor| -> crfcnn::Result<f64> {
        let y = ops::conv2d(&x, &ConvKernel::new(w.clone(), None)?)?;
        let q = ops::scaled_softmax(&y, 0.5, 3.0)?;
        let z = ops::conv2d(&q, &head)?;
        Ok(ops::log_sum_exp(z.data()) - z.data()[target])
    };

    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let wv = tape.var(w.clone());
    let hv = tape.constant(head.weight.clone());
    let y = tape.conv2d(xv, wv, None)?;
    let q = tape.scaled_softmax(y, 0.5, 3.0)?;
    let z = tape.conv2d(q, hv, None)?;
    let loss = tape.spatial_nll(z, target)?;
    let analytic = tape.backward(loss)?.get(wv).expect("weight gradient").clone();

    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..w.len() {
        let mut up = w.clone();
        up.data_mut()[i] += eps;
        let mut down = w.clone();
        down.data_mut()[i] -= eps;
        let fd = (loss_of(&up)? - loss_of(&down)?) / (2.0 * eps);
        worst = worst.max((fd - analytic.data()[i]).abs());
    }
    println!("loss {:.6}; max |analytic - numeric| = {worst:.3e} over {} weights", tape.value(loss).data()[0], w.len());

    let r = gradcheck(&gradcheck_config(), 16, 0)?;
    println!("three-joint model: {} parameters, max relative error {:.3e}", r.checked, r.max_rel_error);
    println!("worst entry: {}", r.worst);
    Ok(())
}

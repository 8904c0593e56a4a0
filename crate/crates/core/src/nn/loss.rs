// SPDX-License-Identifier: Apache-2.0

/// Absolute error and its subgradient (`0` at equality).
pub fn l1_loss(pred: f64, label: f64) -> (f64, f64) {
    let d = pred - label;
    let g = if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    };
    (d.abs(), g)
}

/// Mean absolute error over a batch with per-prediction gradients.
pub fn l1_batch(preds: &[f64], labels: &[f64]) -> (f64, Vec<f64>) {
    assert_eq!(preds.len(), labels.len());
    let n = preds.len().max(1) as f64;
    let mut total = 0.0;
    let grads = preds
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let (l, g) = l1_loss(p, y);
            total += l;
            g / n
        })
        .collect();
    (total / n, grads)
}

use crate::data::{stack_batch, SegmentationSample};
use crate::error::{Error, Result};
use crate::metrics::{Aggregation, ClassReport, DscAccumulator};
use crate::nn::PRNet;
use crate::tensor::{no_grad, Element, Tensor};

/// Per-pixel argmax over the class axis of `[N,K,H,W]` logits.
pub fn argmax_classes<T: Element>(logits: &Tensor<T>) -> Result<Vec<u8>> {
    let [n, k, h, w] = logits.dims4("argmax")?;
    let d = logits.data();
    let hw = h * w;
    let mut out = Vec::with_capacity(n * hw);
    for b in 0..n {
        for p in 0..hw {
            let mut best = 0;
            for c in 1..k {
                // First maximum wins ties.
                if d[(b * k + c) * hw + p] > d[(b * k + best) * hw + p] {
                    best = c;
                }
            }
            out.push(best as u8);
        }
    }
    Ok(out)
}

/// Hard masks for a batch of same-sized samples.
pub fn predict_masks(model: &PRNet<f32>, samples: &[&SegmentationSample]) -> Result<Vec<u8>> {
    let (x, _) = stack_batch(samples)?;
    no_grad(|| argmax_classes(&model.forward(&x)?))
}

/// DSC report of `model` on `samples`, `dataset_classes` being the dataset's
/// class count.
pub fn evaluate(
    model: &PRNet<f32>,
    samples: &[SegmentationSample],
    dataset_classes: usize,
    names: Option<&[String]>,
    aggregation: Aggregation,
    batch_size: usize,
) -> Result<ClassReport> {
    let k = model.config().num_classes;
    if k != dataset_classes {
        return Err(Error::Dataset(format!(
            "model predicts {k} classes, dataset has {dataset_classes}"
        )));
    }
    if samples.is_empty() {
        return Err(Error::Dataset("evaluation set is empty".into()));
    }
    let mut acc = DscAccumulator::new(k);
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&SegmentationSample> = chunk.iter().collect();
        for s in &refs {
            s.check_classes(k)?;
        }
        let pred = predict_masks(model, &refs)?;
        let gt: Vec<u8> = refs.iter().flat_map(|s| s.mask.iter().copied()).collect();
        acc.add_batch(&pred, &gt, refs.len())?;
    }
    acc.report(names, aggregation)
}

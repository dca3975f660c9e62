use crate::error::{Error, Result};
use crate::network::argmax;

#[derive(Debug, Clone, PartialEq)]
pub struct UtterancePrediction {
    pub posterior: Vec<f64>,
    pub class: usize,
}

/// Mean segment posterior per utterance, then argmax (ties to the lowest class).
pub fn utterance_aggregate(groups: &[Vec<Vec<f64>>]) -> Result<Vec<UtterancePrediction>> {
    groups
        .iter()
        .enumerate()
        .map(|(g, segs)| {
            let first = segs
                .first()
                .ok_or_else(|| Error::Metrics(format!("utterance group {g} is empty")))?;
            let mut mean = vec![0.0; first.len()];
            for s in segs {
                if s.len() != mean.len() {
                    return Err(Error::Shape(format!("group {g}: posterior lengths differ")));
                }
                for (m, v) in mean.iter_mut().zip(s) {
                    *m += v;
                }
            }
            let n = segs.len() as f64;
            mean.iter_mut().for_each(|m| *m /= n);
            Ok(UtterancePrediction {
                class: argmax(&mean),
                posterior: mean,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn averages_then_argmax() {
        let out = utterance_aggregate(&[
            vec![vec![0.6, 0.4], vec![0.2, 0.8]],
            vec![vec![0.7, 0.3]],
            vec![vec![0.5, 0.5]],
        ])
        .unwrap();
        assert!((out[0].posterior[0] - 0.4).abs() < 1e-15);
        assert_eq!(out[0].class, 1);
        assert_eq!(out[1].class, 0);
        assert_eq!(out[2].class, 0);
    }

    #[test]
    fn empty_group_is_an_error() {
        assert!(utterance_aggregate(&[vec![]]).is_err());
    }
}

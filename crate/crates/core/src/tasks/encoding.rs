use crate::error::{Error, Result};

/// Concatenated one-hot blocks, one per label.
pub fn encode_targets(labels: &[usize], class_counts: &[usize]) -> Result<Vec<f64>> {
    if labels.len() != class_counts.len() {
        return Err(Error::Validation(format!(
            "{} labels for {} target blocks",
            labels.len(),
            class_counts.len()
        )));
    }
    let mut out = vec![0.0; class_counts.iter().sum()];
    let mut offset = 0;
    for (block, (&label, &count)) in labels.iter().zip(class_counts).enumerate() {
        if label >= count {
            return Err(Error::Validation(format!("label {label} out of range for block {block} with {count} classes")));
        }
        out[offset + label] = 1.0;
        offset += count;
    }
    Ok(out)
}

/// Arg-max of each block; the first maximum wins ties.
pub fn decode_targets(encoded: &[f64], class_counts: &[usize]) -> Vec<usize> {
    let mut offset = 0;
    class_counts
        .iter()
        .map(|&count| {
            let block = &encoded[offset..offset + count];
            offset += count;
            block
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_and_two_head_layouts() {
        assert_eq!(encode_targets(&[2], &[4]).unwrap(), vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(encode_targets(&[1, 0], &[2, 2]).unwrap(), vec![0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn out_of_range_label() {
        assert!(matches!(encode_targets(&[4], &[4]), Err(Error::Validation(_))));
        assert!(encode_targets(&[0, 1], &[2]).is_err());
    }
}

/// Longest common subsequence length by dynamic programming, O(|a|·|b|)
/// time and O(min(|a|, |b|)) memory.
pub fn lcs_length<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    if short.is_empty() {
        return 0;
    }
    let mut row = vec![0usize; short.len() + 1];
    for x in long {
        let mut diag = 0;
        for (j, y) in short.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[short.len()]
}

/// Balanced ROUGE-L F-measure over whitespace tokens.
pub fn rouge_l(gold: &str, pred: &str) -> f64 {
    let g: Vec<&str> = gold.split_whitespace().collect();
    let p: Vec<&str> = pred.split_whitespace().collect();
    if g.is_empty() || p.is_empty() {
        return 0.0;
    }
    let l = lcs_length(&g, &p);
    if l == 0 {
        return 0.0;
    }
    let recall = l as f64 / g.len() as f64;
    let precision = l as f64 / p.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lcs_basics() {
        let a = ["x", "y", "z"];
        assert_eq!(lcs_length(&a, &a), 3);
        assert_eq!(lcs_length(&["a", "b"], &["c", "d"]), 0);
        assert_eq!(lcs_length::<&str>(&[], &a), 0);
        assert_eq!(lcs_length(b"ABCBDAB", b"BDCABA"), 4);
    }

    #[test]
    fn rouge_reference_value() {
        let s = rouge_l("the cat sat on the mat", "the cat on mat");
        assert!((s - 0.8).abs() < 1e-12, "{s}");
    }

    #[test]
    fn rouge_degenerate_cases() {
        assert_eq!(rouge_l("a b c", "a b c"), 1.0);
        assert_eq!(rouge_l("a b c", ""), 0.0);
        assert_eq!(rouge_l("", "a"), 0.0);
        assert_eq!(rouge_l("a b", "c d"), 0.0);
    }
}

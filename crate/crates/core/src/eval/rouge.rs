//! Rouge F1 over whitespace tokens.

use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RougeOrder {
    One,
    Two,
    L,
}

// Harmonic mean of o/c and o/r, written as one division so that equal
// ratios give bit-equal scores.
fn f1(overlap: usize, cand: usize, reference: usize) -> f64 {
    if overlap == 0 || cand == 0 || reference == 0 {
        return 0.0;
    }
    (2 * overlap) as f64 / (cand + reference) as f64
}

fn ngram_counts<'a, 'b>(tokens: &'b [&'a str], n: usize) -> HashMap<&'b [&'a str], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

fn rouge_n(c: &[&str], r: &[&str], n: usize) -> f64 {
    let cc = ngram_counts(c, n);
    let rc = ngram_counts(r, n);
    let overlap: usize = cc.iter().map(|(g, k)| (*k).min(*rc.get(g).unwrap_or(&0))).sum();
    f1(overlap, c.len().saturating_sub(n - 1), r.len().saturating_sub(n - 1))
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// F1 of Rouge-1, Rouge-2 or Rouge-L; 0 when either side has no tokens.
pub fn rouge_f1(candidate: &str, reference: &str, order: RougeOrder) -> f64 {
    let c: Vec<&str> = candidate.split_whitespace().collect();
    let r: Vec<&str> = reference.split_whitespace().collect();
    match order {
        RougeOrder::One => rouge_n(&c, &r, 1),
        RougeOrder::Two => rouge_n(&c, &r, 2),
        RougeOrder::L => f1(lcs_len(&c, &r), c.len(), r.len()),
    }
}

/// Character text as whitespace-separated symbols, so Rouge counts symbols.
pub fn spaced(text: &str) -> String {
    let mut s = String::with_capacity(text.len() * 2);
    for (i, ch) in text.chars().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        s.push(ch);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lcs_basics() {
        assert_eq!(lcs_len(b"abcbdab", b"bdcaba"), 4);
        assert_eq!(lcs_len::<u8>(b"", b"abc"), 0);
    }

    #[test]
    fn spacing() {
        assert_eq!(spaced("12+3"), "1 2 + 3");
        assert_eq!(spaced(""), "");
    }
}

//! Suffix array construction by prefix doubling.
//!
//! Words are compared through [`order_key`], which maps the sentinel to 0
//! and every real token `t` to `t + 1`, so a suffix that reaches the end of
//! its document sorts before any suffix that continues with a real token.
//! Ties past a sentinel are broken by the following documents, which makes
//! the order over the whole stream strict.

/// Sort key of a stream word: sentinel below every real token.
#[inline]
pub(crate) fn order_key(word: u32) -> u32 {
    word.wrapping_add(1)
}

/// Returns every stream position in ascending suffix order, sentinel
/// positions included.
pub(crate) fn suffix_order(words: &[u32]) -> Vec<u64> {
    let n = words.len();
    if n == 0 {
        return Vec::new();
    }
    let mut sa: Vec<usize> = (0..n).collect();
    // Ranks start at 1 so that 0 can stand for "past the end".
    let mut rank: Vec<u64> = words.iter().map(|&w| u64::from(order_key(w)) + 1).collect();
    let mut next_rank = vec![0u64; n];
    let mut step = 1usize;
    loop {
        {
            let rank = &rank;
            let key = |i: usize| (rank[i], if i + step < n { rank[i + step] } else { 0 });
            sa.sort_unstable_by_key(|&i| key(i));
            next_rank[sa[0]] = 1;
            for j in 1..n {
                let bump = u64::from(key(sa[j - 1]) != key(sa[j]));
                next_rank[sa[j]] = next_rank[sa[j - 1]] + bump;
            }
        }
        std::mem::swap(&mut rank, &mut next_rank);
        if rank[sa[n - 1]] == n as u64 || step >= n {
            break;
        }
        step *= 2;
    }
    sa.into_iter().map(|p| p as u64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SENTINEL;

    fn keyed_suffix(words: &[u32], pos: usize) -> Vec<u32> {
        words[pos..].iter().map(|&w| order_key(w)).collect()
    }

    fn naive(words: &[u32]) -> Vec<u64> {
        let mut sa: Vec<usize> = (0..words.len()).collect();
        sa.sort_by_key(|&p| keyed_suffix(words, p));
        sa.into_iter().map(|p| p as u64).collect()
    }

    #[test]
    fn matches_naive_sort() {
        let cases: Vec<Vec<u32>> = vec![
            vec![SENTINEL],
            vec![0, 1, 0, 1, SENTINEL, 1, 0, 1, 2, SENTINEL],
            vec![3, 3, 3, 3, 3, SENTINEL],
            vec![5, SENTINEL, 5, SENTINEL, 5, SENTINEL],
            vec![2, 1, 0, SENTINEL, 0, 1, 2, SENTINEL],
        ];
        for words in cases {
            assert_eq!(suffix_order(&words), naive(&words), "{words:?}");
        }
    }

    #[test]
    fn matches_naive_on_pseudo_random_streams() {
        let mut state = 0x2545_f491_u64;
        for round in 0..50 {
            let len = 1 + round * 7;
            let mut words = Vec::with_capacity(len + 1);
            for _ in 0..len {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let v = (state >> 33) as u32 % 5;
                words.push(if v == 4 { SENTINEL } else { v });
            }
            words.push(SENTINEL);
            assert_eq!(suffix_order(&words), naive(&words));
        }
    }
}

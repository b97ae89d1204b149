/// Clipped n-gram matching by exhaustive pairwise comparison.
pub fn oracle_bleu(hyps: &[Vec<u8>], refs: &[Vec<u8>]) -> f64 {
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut h_len, mut r_len) = (0usize, 0usize);
    for (h, r) in hyps.iter().zip(refs) {
        h_len += h.len();
        r_len += r.len();
        for n in 1..=4 {
            if h.len() < n {
                continue;
            }
            totals[n - 1] += h.len() - n + 1;
            let hg: Vec<&[u8]> = (0..=h.len() - n).map(|i| &h[i..i + n]).collect();
            let rg: Vec<&[u8]> = if r.len() >= n {
                (0..=r.len() - n).map(|i| &r[i..i + n]).collect()
            } else {
                vec![]
            };
            let mut seen: Vec<&[u8]> = Vec::new();
            for g in &hg {
                if seen.contains(g) {
                    continue;
                }
                seen.push(g);
                let ch = hg.iter().filter(|x| *x == g).count();
                let cr = rg.iter().filter(|x| *x == g).count();
                matches[n - 1] += ch.min(cr);
            }
        }
    }
    if (0..4).any(|i| totals[i] == 0 || matches[i] == 0) {
        return 0.0;
    }
    let mut log_p = 0.0;
    for i in 0..4 {
        log_p += (matches[i] as f64 / totals[i] as f64).ln();
    }
    let bp = if h_len == 0 {
        0.0
    } else {
        (1.0 - r_len as f64 / h_len as f64).exp().min(1.0)
    };
    100.0 * bp * (log_p / 4.0).exp()
}

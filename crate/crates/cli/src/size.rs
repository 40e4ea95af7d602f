//! Numeric flags with K/M/G suffixes: powers of ten for counts, powers of
//! two for byte sizes.

fn split_suffix(s: &str) -> (&str, Option<char>) {
    match s.chars().last() {
        Some(c) if c.is_ascii_alphabetic() => (&s[..s.len() - 1], Some(c.to_ascii_uppercase())),
        _ => (s, None),
    }
}

fn scaled(s: &str, base: u64) -> Result<u64, String> {
    let t = s.trim();
    let (digits, suffix) = split_suffix(t);
    let mult = match suffix {
        None => 1,
        Some('K') => base,
        Some('M') => base * base,
        Some('G') => base * base * base,
        Some(c) => return Err(format!("unknown suffix '{c}' in '{t}' (use K, M or G)")),
    };
    let v: u64 = digits
        .parse()
        .map_err(|_| format!("'{t}' is not a non-negative integer"))?;
    v.checked_mul(mult).ok_or_else(|| format!("'{t}' is too large"))
}

/// `10K` is 10,000.
pub fn count(s: &str) -> Result<usize, String> {
    scaled(s, 1000).and_then(|v| usize::try_from(v).map_err(|_| format!("'{s}' is too large")))
}

/// `64M` is 64 MiB. A trailing `B` or `iB` is accepted.
pub fn bytes(s: &str) -> Result<u64, String> {
    let t = s.trim();
    let t = t
        .strip_suffix("iB")
        .or_else(|| t.strip_suffix('B'))
        .unwrap_or(t);
    scaled(t, 1024)
}

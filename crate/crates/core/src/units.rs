//! Scalar units shared by every module.

/// Nanoseconds. Used both for timestamps (since the session epoch, midnight of
/// the trading date) and for durations.
pub type Nanos = i64;
/// Exchange order id.
pub type Oid = u64;
/// Price in integer tick units.
pub type Price = i64;
/// Quantity in contracts.
pub type Qty = i64;

pub const NANOS_PER_MILLI: Nanos = 1_000_000;
pub const NANOS_PER_SEC: Nanos = 1_000_000_000;

pub const fn millis(ms: i64) -> Nanos {
    ms * NANOS_PER_MILLI
}

pub const fn secs(s: i64) -> Nanos {
    s * NANOS_PER_SEC
}

pub fn to_secs_f64(ns: Nanos) -> f64 {
    ns as f64 / NANOS_PER_SEC as f64
}

/// Parses durations such as `500ms`, `10s`, `2m`, `1h`, `250us` or `75ns`.
/// A bare integer is read as milliseconds.
pub fn parse_duration(text: &str) -> Option<Nanos> {
    let text = text.trim();
    let split = text
        .find(|c: char| !(c.is_ascii_digit() || c == '.'))
        .unwrap_or(text.len());
    let (num, unit) = text.split_at(split);
    let value: f64 = num.parse().ok()?;
    let scale = match unit.trim() {
        "" | "ms" => 1e6,
        "ns" => 1.0,
        "us" => 1e3,
        "s" => 1e9,
        "m" | "min" => 60e9,
        "h" => 3600e9,
        _ => return None,
    };
    let ns = value * scale;
    if !ns.is_finite() || ns < 0.0 {
        return None;
    }
    Some(ns.round() as Nanos)
}

/// Inverse of [`parse_duration`] for labels: picks the largest unit that
/// divides the value exactly.
pub fn format_duration(ns: Nanos) -> String {
    const UNITS: [(Nanos, &str); 5] = [
        (3_600 * NANOS_PER_SEC, "h"),
        (NANOS_PER_SEC, "s"),
        (NANOS_PER_MILLI, "ms"),
        (1_000, "us"),
        (1, "ns"),
    ];
    if ns == 0 {
        return "0s".to_string();
    }
    for (scale, unit) in UNITS {
        if ns % scale == 0 {
            return format!("{}{}", ns / scale, unit);
        }
    }
    unreachable!()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn durations_parse_and_format() {
        assert_eq!(parse_duration("500ms"), Some(millis(500)));
        assert_eq!(parse_duration("10s"), Some(secs(10)));
        assert_eq!(parse_duration("1h"), Some(secs(3600)));
        assert_eq!(parse_duration("250"), Some(millis(250)));
        assert_eq!(parse_duration("1.5s"), Some(millis(1500)));
        assert_eq!(parse_duration("3 parsecs"), None);
        assert_eq!(format_duration(millis(50)), "50ms");
        assert_eq!(format_duration(secs(20)), "20s");
        assert_eq!(format_duration(millis(1500)), "1500ms");
    }
}

//! Exclusion-set constructors over order lifecycles.
//!
//! Exclusion is per order id for the whole session: once an id is excluded,
//! all of its book-building events are dropped (its trades are kept, see
//! [`crate::book::apply_exclusion`]).

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_model::Lifecycles;
use crate::units::{format_duration, parse_duration, Nanos, Oid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FilterKind {
    Unfiltered,
    Lifetime,
    ModCount,
    ModTime,
}

impl FilterKind {
    pub fn code(self) -> &'static str {
        match self {
            FilterKind::Unfiltered => "UF",
            FilterKind::Lifetime => "LF",
            FilterKind::ModCount => "MF",
            FilterKind::ModTime => "MTF",
        }
    }
}

/// One filtration scheme with its threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum FilterSpec {
    Unfiltered,
    /// Keep orders with lifetime >= threshold.
    Lifetime(Nanos),
    /// Keep orders with at most this many modifications.
    ModCount(u32),
    /// Drop orders whose last two modifications are closer than threshold.
    ModTime(Nanos),
}

impl FilterSpec {
    pub fn lifetime(threshold: Nanos) -> Result<Self> {
        if threshold <= 0 {
            return Err(Error::Config("lifetime threshold must be positive".into()));
        }
        Ok(FilterSpec::Lifetime(threshold))
    }

    pub fn mod_time(threshold: Nanos) -> Result<Self> {
        if threshold <= 0 {
            return Err(Error::Config("modification-time threshold must be positive".into()));
        }
        Ok(FilterSpec::ModTime(threshold))
    }

    pub fn kind(&self) -> FilterKind {
        match self {
            FilterSpec::Unfiltered => FilterKind::Unfiltered,
            FilterSpec::Lifetime(_) => FilterKind::Lifetime,
            FilterSpec::ModCount(_) => FilterKind::ModCount,
            FilterSpec::ModTime(_) => FilterKind::ModTime,
        }
    }

    /// `UF`, `LF-500ms`, `MF-3`, `MTF-50ms`.
    pub fn label(&self) -> String {
        match *self {
            FilterSpec::Unfiltered => "UF".to_string(),
            FilterSpec::Lifetime(t) => format!("LF-{}", format_duration(t)),
            FilterSpec::ModCount(m) => format!("MF-{m}"),
            FilterSpec::ModTime(t) => format!("MTF-{}", format_duration(t)),
        }
    }

    /// Builds a spec from a CLI-style kind (`uf|lf|mf|mtf`) and threshold text.
    pub fn from_parts(kind: &str, threshold: Option<&str>) -> Result<Self> {
        let need = || {
            threshold.ok_or_else(|| Error::Config(format!("filter `{kind}` needs a threshold")))
        };
        let duration = |t: &str| {
            parse_duration(t).ok_or_else(|| Error::Config(format!("bad duration `{t}`")))
        };
        match kind.to_ascii_lowercase().as_str() {
            "uf" => match threshold {
                None => Ok(FilterSpec::Unfiltered),
                Some(_) => Err(Error::Config("the unfiltered scheme takes no threshold".into())),
            },
            "lf" => FilterSpec::lifetime(duration(need()?)?),
            "mtf" => FilterSpec::mod_time(duration(need()?)?),
            "mf" => {
                let t = need()?;
                t.trim()
                    .parse()
                    .map(FilterSpec::ModCount)
                    .map_err(|_| Error::Config(format!("bad modification count `{t}`")))
            }
            other => Err(Error::Config(format!("unknown filter kind `{other}`"))),
        }
    }

    /// Builds the exclusion set for this scheme.
    pub fn exclusions(&self, lifecycles: &Lifecycles) -> ExclusionSet {
        match *self {
            FilterSpec::Unfiltered => ExclusionSet {
                spec: *self,
                excluded: BTreeSet::new(),
            },
            FilterSpec::Lifetime(t) => lifetime_filter(lifecycles, t),
            FilterSpec::ModCount(m) => modcount_filter(lifecycles, m),
            FilterSpec::ModTime(t) => modtime_filter(lifecycles, t),
        }
    }
}

impl fmt::Display for FilterSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for FilterSpec {
    type Err = Error;

    /// Accepts labels (`MTF-50ms`) and `kind:threshold` (`mtf:50ms`).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s.split_once([':', '-']) {
            Some((kind, threshold)) => FilterSpec::from_parts(kind, Some(threshold)),
            None => FilterSpec::from_parts(s, None),
        }
    }
}

impl TryFrom<String> for FilterSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<FilterSpec> for String {
    fn from(spec: FilterSpec) -> String {
        spec.label()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExclusionSet {
    pub spec: FilterSpec,
    pub excluded: BTreeSet<Oid>,
}

impl ExclusionSet {
    pub fn contains(&self, oid: Oid) -> bool {
        self.excluded.contains(&oid)
    }

    pub fn len(&self) -> usize {
        self.excluded.len()
    }

    pub fn is_empty(&self) -> bool {
        self.excluded.is_empty()
    }

    /// Newline-delimited oid list, ascending.
    pub fn write_oid_list<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for oid in &self.excluded {
            writeln!(w, "{oid}")?;
        }
        Ok(())
    }
}

fn collect(spec: FilterSpec, lifecycles: &Lifecycles, drop: impl Fn(&crate::OrderLifecycle) -> bool) -> ExclusionSet {
    ExclusionSet {
        spec,
        excluded: lifecycles
            .values()
            .filter(|l| drop(l))
            .map(|l| l.oid)
            .collect(),
    }
}

/// Excludes orders whose lifetime is strictly below `t_bar`.
pub fn lifetime_filter(lifecycles: &Lifecycles, t_bar: Nanos) -> ExclusionSet {
    collect(FilterSpec::Lifetime(t_bar), lifecycles, |l| l.lifetime < t_bar)
}

/// Excludes orders modified more than `m_bar` times.
pub fn modcount_filter(lifecycles: &Lifecycles, m_bar: u32) -> ExclusionSet {
    collect(FilterSpec::ModCount(m_bar), lifecycles, |l| l.mod_count > m_bar)
}

/// Excludes orders whose final two modifications are less than `mt_bar`
/// apart. Orders with fewer than two modifications are kept.
pub fn modtime_filter(lifecycles: &Lifecycles, mt_bar: Nanos) -> ExclusionSet {
    collect(FilterSpec::ModTime(mt_bar), lifecycles, |l| {
        l.last_mod_gap.is_some_and(|gap| gap < mt_bar)
    })
}

/// The threshold sweep used in the reference experiments, unfiltered first.
pub fn reference_grid() -> Vec<FilterSpec> {
    use crate::units::millis;
    let mut grid = vec![FilterSpec::Unfiltered];
    grid.extend([100, 500, 1000].map(|ms| FilterSpec::Lifetime(millis(ms))));
    grid.extend([1, 3, 5].map(FilterSpec::ModCount));
    grid.extend([50, 100, 200].map(|ms| FilterSpec::ModTime(millis(ms))));
    grid
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_model::{OrderLifecycle, Terminal};
    use crate::units::millis;

    fn lc(oid: Oid, lifetime: Nanos, mods: u32, gap: Option<Nanos>) -> OrderLifecycle {
        OrderLifecycle {
            oid,
            entry: 0,
            exit: lifetime,
            lifetime,
            mod_count: mods,
            last_mod_gap: gap,
            terminal: Terminal::Cancelled,
        }
    }

    fn map(items: Vec<OrderLifecycle>) -> Lifecycles {
        items.into_iter().map(|l| (l.oid, l)).collect()
    }

    #[test]
    fn lifetime_boundary_is_retained() {
        let m = map(vec![lc(1, millis(50), 0, None), lc(2, millis(100), 0, None)]);
        let ex = lifetime_filter(&m, millis(100));
        assert!(ex.contains(1));
        assert!(!ex.contains(2));
    }

    #[test]
    fn modcount_rules() {
        let m = map(vec![lc(1, 1, 4, Some(1)), lc(2, 1, 0, None), lc(3, 1, 3, Some(1))]);
        let ex = modcount_filter(&m, 3);
        assert_eq!(ex.excluded.iter().copied().collect::<Vec<_>>(), vec![1]);
        assert!(modcount_filter(&m, 0).excluded.len() == 2);
    }

    #[test]
    fn modtime_needs_two_modifications() {
        let m = map(vec![
            lc(1, 1, 2, Some(millis(15))),
            lc(2, 1, 1, None),
            lc(3, 1, 5, Some(millis(50))),
        ]);
        let ex = modtime_filter(&m, millis(50));
        assert_eq!(ex.excluded.iter().copied().collect::<Vec<_>>(), vec![1]);
    }

    #[test]
    fn unfiltered_is_empty() {
        let m = map(vec![lc(1, 0, 9, Some(0))]);
        assert!(FilterSpec::Unfiltered.exclusions(&m).is_empty());
    }

    #[test]
    fn labels_parse_back() {
        for spec in reference_grid() {
            assert_eq!(spec.label().parse::<FilterSpec>().unwrap(), spec);
        }
        assert_eq!("mtf:50ms".parse::<FilterSpec>().unwrap(), FilterSpec::ModTime(millis(50)));
        assert_eq!(FilterSpec::from_parts("lf", Some("1s")).unwrap().label(), "LF-1s");
        assert!(FilterSpec::from_parts("lf", Some("0ms")).is_err());
        assert!(FilterSpec::from_parts("lf", None).is_err());
        assert!(FilterSpec::from_parts("zz", None).is_err());
    }

    #[test]
    fn oid_list_export() {
        let m = map(vec![lc(9, 1, 0, None), lc(3, 1, 0, None), lc(5, millis(500), 0, None)]);
        let mut buf = Vec::new();
        lifetime_filter(&m, millis(1)).write_oid_list(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "3\n9\n");
    }
}

use std::path::Path;

use super::mask::{DomainKind, DomainMask, StudyArea};
use crate::error::{Error, Result};

/// One observed location; `campaign` is 1-based.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub campaign: usize,
}

/// Observed locations across `n_campaigns` survey campaigns.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointPattern {
    pub points: Vec<Point>,
    pub n_campaigns: usize,
}

impl PointPattern {
    pub fn new(points: Vec<Point>, n_campaigns: usize) -> Result<Self> {
        if let Some((i, p)) = points.iter().enumerate().find(|(_, p)| p.campaign == 0 || p.campaign > n_campaigns) {
            return Err(Error::InvalidInput(format!(
                "point {i} has campaign {} outside 1..={n_campaigns}",
                p.campaign
            )));
        }
        Ok(Self { points, n_campaigns })
    }

    pub fn empty(n_campaigns: usize) -> Self {
        Self {
            points: Vec::new(),
            n_campaigns,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn campaign(&self, t: usize) -> impl Iterator<Item = &Point> {
        self.points.iter().filter(move |p| p.campaign == t)
    }

    /// Point totals per campaign, index `t - 1`.
    pub fn counts_per_campaign(&self) -> Vec<usize> {
        let mut out = vec![0; self.n_campaigns];
        for p in &self.points {
            out[p.campaign - 1] += 1;
        }
        out
    }

    /// Points whose index satisfies `keep`, in original order.
    pub fn filter_indexed(&self, keep: impl Fn(usize) -> bool) -> Self {
        Self {
            points: self.points.iter().enumerate().filter(|(i, _)| keep(*i)).map(|(_, p)| *p).collect(),
            n_campaigns: self.n_campaigns,
        }
    }

    /// Rows (0-based) of points outside their campaign's domain.
    pub fn outside_rows(&self, domains: &CampaignDomains, area: &StudyArea) -> Vec<usize> {
        self.points
            .iter()
            .enumerate()
            .filter(|(_, p)| !domains.mask(area, p.campaign).contains_point(p.x, p.y))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn load(path: impl AsRef<Path>, n_campaigns: usize) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, n_campaigns, &path.display().to_string())
    }

    /// Parses a `x,y,campaign` CSV.
    pub fn parse(text: &str, n_campaigns: usize, source: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let headers = reader.headers().map_err(|e| Error::parse(source, 1, e.to_string()))?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::parse(source, 1, format!("points header lacks column `{name}`")))
        };
        let (ix, iy, it) = (col("x")?, col("y")?, col("campaign")?);
        let mut points = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| Error::parse(source, line, e.to_string()))?;
            let num = |k: usize, what: &str| -> Result<f64> {
                rec.get(k)
                    .and_then(|s| s.parse::<f64>().ok())
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::parse(source, line, format!("invalid {what} `{}`", rec.get(k).unwrap_or(""))))
            };
            let (x, y) = (num(ix, "x")?, num(iy, "y")?);
            let campaign: usize = rec
                .get(it)
                .and_then(|s| s.parse().ok())
                .filter(|&t: &usize| t >= 1 && t <= n_campaigns)
                .ok_or_else(|| {
                    Error::parse(
                        source,
                        line,
                        format!("campaign `{}` not in 1..={n_campaigns}", rec.get(it).unwrap_or("")),
                    )
                })?;
            points.push(Point { x, y, campaign });
        }
        Ok(Self { points, n_campaigns })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,campaign\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.x, p.y, p.campaign));
        }
        out
    }
}

/// Which domain each campaign surveyed, index `t - 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CampaignDomains {
    pub kinds: Vec<DomainKind>,
}

impl CampaignDomains {
    pub fn new(kinds: Vec<DomainKind>) -> Self {
        Self { kinds }
    }

    /// Nine campaigns: 1-5 outside the meadow, 6-7 inside it, 8-9 everywhere.
    pub fn nine_campaign_layout() -> Self {
        use DomainKind::*;
        Self::new(vec![D2, D2, D2, D2, D2, D1, D1, D, D])
    }

    pub fn n_campaigns(&self) -> usize {
        self.kinds.len()
    }

    pub fn kind(&self, t: usize) -> DomainKind {
        self.kinds[t - 1]
    }

    pub fn mask<'a>(&self, area: &'a StudyArea, t: usize) -> &'a DomainMask {
        area.mask(self.kind(t))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Parses a `campaign,domain` CSV; campaigns must cover `1..=T` exactly once.
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let headers = reader.headers().map_err(|e| Error::parse(source, 1, e.to_string()))?.clone();
        if headers.len() < 2 || &headers[0] != "campaign" || &headers[1] != "domain" {
            return Err(Error::parse(source, 1, "campaign map header must be `campaign,domain`"));
        }
        let mut rows: Vec<(usize, DomainKind, usize)> = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| Error::parse(source, line, e.to_string()))?;
            let t: usize = rec[0]
                .parse()
                .map_err(|_| Error::parse(source, line, format!("invalid campaign `{}`", &rec[0])))?;
            let kind: DomainKind = rec[1].parse().map_err(|e: Error| Error::parse(source, line, e.to_string()))?;
            rows.push((t, kind, line));
        }
        rows.sort_by_key(|r| r.0);
        for (i, &(t, _, line)) in rows.iter().enumerate() {
            if t != i + 1 {
                return Err(Error::parse(
                    source,
                    line,
                    format!("campaigns must be numbered 1..={} without gaps or repeats", rows.len()),
                ));
            }
        }
        if rows.is_empty() {
            return Err(Error::parse(source, 1, "campaign map is empty"));
        }
        Ok(Self::new(rows.into_iter().map(|r| r.1).collect()))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("campaign,domain\n");
        for (i, k) in self.kinds.iter().enumerate() {
            out.push_str(&format!("{},{}\n", i + 1, k));
        }
        out
    }
}

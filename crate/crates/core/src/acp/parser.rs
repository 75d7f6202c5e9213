//! Text form of policies.
//!
//! ```text
//! <α=LinkedIn> :: <(ρ=2 AND γ=LinkedIn) OR S=CallCensor>
//! <χ=0.2 AND α=Facebook> :: <ρ=1>
//! <Δ> :: <B=mom OR B=dad>
//! ---
//! <blacklist> :: <B=Alice OR B=Gary OR C=Alice>
//! ```
//!
//! ASCII aliases are accepted for the Greek keys (`alpha`, `chi`, `delta`,
//! `rho`, `gamma`). `L=lat:lon:radius_m` restricts the originator location.
//! Printing always uses the canonical Greek spelling and parenthesizes every
//! compound operand, so `parse(print(p)) == p`.

use std::fmt::{self, Display, Write as _};

use super::*;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    LAngle,
    RAngle,
    Sep,
    LParen,
    RParen,
    And,
    Or,
    Not,
    Word(String),
}

fn tokenize(s: &str) -> Result<Vec<Tok>> {
    let mut out = Vec::new();
    let mut chars = s.chars().peekable();
    while let Some(&c) = chars.peek() {
        match c {
            c if c.is_whitespace() => {
                chars.next();
            }
            '<' => {
                chars.next();
                out.push(Tok::LAngle);
            }
            '>' => {
                chars.next();
                out.push(Tok::RAngle);
            }
            '(' => {
                chars.next();
                out.push(Tok::LParen);
            }
            ')' => {
                chars.next();
                out.push(Tok::RParen);
            }
            ':' => {
                chars.next();
                if chars.next() != Some(':') {
                    return Err(Error::Parse("expected `::`".into()));
                }
                out.push(Tok::Sep);
            }
            _ => {
                let mut w = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_whitespace() || "<>()".contains(c) {
                        break;
                    }
                    w.push(c);
                    chars.next();
                }
                out.push(match w.to_ascii_uppercase().as_str() {
                    "AND" => Tok::And,
                    "OR" => Tok::Or,
                    "NOT" => Tok::Not,
                    _ => Tok::Word(w),
                });
            }
        }
    }
    Ok(out)
}

struct Parser<'a, A> {
    toks: &'a [Tok],
    pos: usize,
    atom: &'a dyn Fn(&str) -> Result<A>,
}

impl<A> Parser<'_, A> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn expect(&mut self, t: Tok) -> Result<()> {
        match self.toks.get(self.pos) {
            Some(x) if *x == t => {
                self.pos += 1;
                Ok(())
            }
            other => Err(Error::Parse(format!("expected {t:?}, found {other:?}"))),
        }
    }

    fn or(&mut self) -> Result<Expr<A>> {
        let mut items = vec![self.and()?];
        while self.peek() == Some(&Tok::Or) {
            self.pos += 1;
            items.push(self.and()?);
        }
        Ok(if items.len() == 1 {
            items.pop().unwrap()
        } else {
            Expr::Or(items)
        })
    }

    fn and(&mut self) -> Result<Expr<A>> {
        let mut items = vec![self.unary()?];
        while self.peek() == Some(&Tok::And) {
            self.pos += 1;
            items.push(self.unary()?);
        }
        Ok(if items.len() == 1 {
            items.pop().unwrap()
        } else {
            Expr::And(items)
        })
    }

    fn unary(&mut self) -> Result<Expr<A>> {
        match self.toks.get(self.pos).cloned() {
            Some(Tok::Not) => {
                self.pos += 1;
                Ok(Expr::Not(Box::new(self.unary()?)))
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let e = self.or()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Some(Tok::Word(w)) => {
                self.pos += 1;
                Ok(Expr::Atom((self.atom)(&w)?))
            }
            other => Err(Error::Parse(format!("unexpected token {other:?}"))),
        }
    }
}

fn split_atom(w: &str) -> (&str, Option<&str>) {
    match w.split_once('=') {
        Some((k, v)) => (k, Some(v)),
        None => (w, None),
    }
}

fn need<'a>(key: &str, v: Option<&'a str>) -> Result<&'a str> {
    v.filter(|s| !s.is_empty())
        .ok_or_else(|| Error::Parse(format!("`{key}` requires a value")))
}

fn number(key: &str, v: Option<&str>) -> Result<f64> {
    let s = need(key, v)?;
    s.parse()
        .map_err(|_| Error::Parse(format!("`{key}` expects a number, got `{s}`")))
}

fn principal(s: &str) -> Principal {
    s.parse()
        .map(Principal::Uid)
        .unwrap_or_else(|_| Principal::Name(s.into()))
}

fn peer_ref(s: &str) -> PeerRef {
    match principal(s) {
        Principal::Uid(u) => PeerRef::Id(PeerId(u.0)),
        Principal::Name(n) => PeerRef::Name(n),
    }
}

fn object_atom(w: &str) -> Result<ObjectAtom> {
    let (k, v) = split_atom(w);
    match k {
        "α" | "alpha" => Ok(ObjectAtom::Label(need(k, v)?.into())),
        "χ" | "chi" => {
            let x = number(k, v)?;
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::Parse(format!("weight threshold {x} outside [0, 1]")));
            }
            Ok(ObjectAtom::MinWeight(x))
        }
        "Δ" | "delta" if v.is_none() => Ok(ObjectAtom::Location),
        _ => Err(Error::Parse(format!("unknown data object `{w}`"))),
    }
}

fn geo_area(v: &str) -> Result<GeoArea> {
    let parts: Vec<&str> = v.split(':').collect();
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| p.parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| Error::Parse(format!("bad area `{v}`, expected lat:lon:radius_m")))?;
    match nums[..] {
        [lat, lon, radius_m] if radius_m >= 0.0 => Ok(GeoArea { lat, lon, radius_m }),
        _ => Err(Error::Parse(format!(
            "bad area `{v}`, expected lat:lon:radius_m"
        ))),
    }
}

fn spec_atom(w: &str) -> Result<SpecAtom> {
    let (k, v) = split_atom(w);
    Ok(match k {
        "ρ" | "rho" => {
            let s = need(k, v)?;
            SpecAtom::Distance(
                s.parse()
                    .map_err(|_| Error::Parse(format!("`ρ` expects a hop count, got `{s}`")))?,
            )
        }
        "γ" | "gamma" => SpecAtom::ConnectionLabel(need(k, v)?.into()),
        "y" => SpecAtom::ConnectionWeight(number(k, v)?),
        "B" => SpecAtom::OriginatorUser(principal(need(k, v)?)),
        "P" => SpecAtom::OriginatorPeer(peer_ref(need(k, v)?)),
        "C" => SpecAtom::IntermediateUser(principal(need(k, v)?)),
        "M" => SpecAtom::IntermediatePeer(peer_ref(need(k, v)?)),
        "S" => SpecAtom::Application(need(k, v)?.into()),
        "L" => SpecAtom::OriginatorLocation(geo_area(need(k, v)?)?),
        _ => return Err(Error::Parse(format!("unknown specification atom `{w}`"))),
    })
}

fn parse_expr<A>(toks: &[Tok], atom: &dyn Fn(&str) -> Result<A>) -> Result<Expr<A>> {
    let mut p = Parser { toks, pos: 0, atom };
    let e = p.or()?;
    if p.pos != toks.len() {
        return Err(Error::Parse(format!(
            "trailing tokens after {:?}",
            toks[p.pos - 1]
        )));
    }
    Ok(e)
}

/// Splits `<lhs> :: <rhs>` into the token runs inside each bracket pair.
fn split_rule(toks: &[Tok]) -> Result<(&[Tok], &[Tok])> {
    let sep = toks
        .iter()
        .position(|t| *t == Tok::Sep)
        .ok_or_else(|| Error::Parse("missing `::`".into()))?;
    let inner = |part: &'static str, run: &'_ [Tok]| -> Result<()> {
        if run.len() < 2 || run[0] != Tok::LAngle || run[run.len() - 1] != Tok::RAngle {
            return Err(Error::Parse(format!("{part} must be enclosed in `< >`")));
        }
        Ok(())
    };
    let (lhs, rhs) = (&toks[..sep], &toks[sep + 1..]);
    inner("data objects", lhs)?;
    inner("specification", rhs)?;
    Ok((&lhs[1..lhs.len() - 1], &rhs[1..rhs.len() - 1]))
}

fn blacklist_entries(e: Expr<SpecAtom>, out: &mut Vec<BlacklistEntry>) -> Result<()> {
    match e {
        Expr::Or(items) => items
            .into_iter()
            .try_for_each(|i| blacklist_entries(i, out)),
        Expr::Atom(SpecAtom::OriginatorUser(p)) => {
            out.push(BlacklistEntry::OriginatorUser(p));
            Ok(())
        }
        Expr::Atom(SpecAtom::OriginatorPeer(p)) => {
            out.push(BlacklistEntry::OriginatorPeer(p));
            Ok(())
        }
        Expr::Atom(SpecAtom::IntermediateUser(p)) => {
            out.push(BlacklistEntry::IntermediateUser(p));
            Ok(())
        }
        Expr::Atom(SpecAtom::IntermediatePeer(p)) => {
            out.push(BlacklistEntry::IntermediatePeer(p));
            Ok(())
        }
        _ => Err(Error::Parse(
            "blacklist accepts only B, P, C and M atoms joined by OR".into(),
        )),
    }
}

/// Parses a policy text for `owner`. Errors carry the 1-based line number.
pub fn parse_policy(owner: Uid, text: &str) -> Result<AccessPolicy> {
    let mut policy = AccessPolicy::empty(owner);
    let mut in_blacklist = false;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let at = |e: Error| Error::ParseAt {
            line: idx + 1,
            message: match e {
                Error::Parse(m) => m,
                other => other.to_string(),
            },
        };
        if line.len() >= 3 && line.chars().all(|c| c == '-') {
            in_blacklist = true;
            continue;
        }
        let toks = tokenize(line).map_err(at)?;
        let (lhs, rhs) = split_rule(&toks).map_err(at)?;
        let is_blacklist = matches!(lhs, [Tok::Word(w)] if w.eq_ignore_ascii_case("blacklist"));
        if is_blacklist != in_blacklist {
            return Err(at(Error::Parse(if is_blacklist {
                "blacklist rules must follow the `---` separator".into()
            } else {
                "only `<blacklist>` rules may follow the `---` separator".into()
            })));
        }
        if is_blacklist {
            let spec = parse_expr(rhs, &spec_atom).map_err(at)?;
            blacklist_entries(spec, &mut policy.blacklist).map_err(at)?;
        } else {
            let objects = parse_expr(lhs, &object_atom).map_err(at)?;
            let spec = parse_expr(rhs, &spec_atom).map_err(at)?;
            policy.rules.push(Rule { objects, spec });
        }
    }
    Ok(policy)
}

impl Display for Principal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Principal::Uid(u) => write!(f, "{u}"),
            Principal::Name(n) => f.write_str(n),
        }
    }
}

impl Display for PeerRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PeerRef::Id(id) => write!(f, "{id}"),
            PeerRef::Name(n) => f.write_str(n),
        }
    }
}

impl Display for ObjectAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObjectAtom::Label(l) => write!(f, "α={l}"),
            ObjectAtom::MinWeight(x) => write!(f, "χ={x}"),
            ObjectAtom::Location => f.write_str("Δ"),
        }
    }
}

impl Display for SpecAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpecAtom::Distance(k) => write!(f, "ρ={k}"),
            SpecAtom::ConnectionLabel(l) => write!(f, "γ={l}"),
            SpecAtom::ConnectionWeight(y) => write!(f, "y={y}"),
            SpecAtom::OriginatorUser(p) => write!(f, "B={p}"),
            SpecAtom::OriginatorPeer(p) => write!(f, "P={p}"),
            SpecAtom::IntermediateUser(p) => write!(f, "C={p}"),
            SpecAtom::IntermediatePeer(p) => write!(f, "M={p}"),
            SpecAtom::Application(s) => write!(f, "S={s}"),
            SpecAtom::OriginatorLocation(a) => write!(f, "L={}:{}:{}", a.lat, a.lon, a.radius_m),
        }
    }
}

impl Display for BlacklistEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlacklistEntry::OriginatorUser(p) => write!(f, "B={p}"),
            BlacklistEntry::OriginatorPeer(p) => write!(f, "P={p}"),
            BlacklistEntry::IntermediateUser(p) => write!(f, "C={p}"),
            BlacklistEntry::IntermediatePeer(p) => write!(f, "M={p}"),
        }
    }
}

impl<A: Display> Display for Expr<A> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn operand<A: Display>(e: &Expr<A>, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            match e {
                Expr::Atom(_) | Expr::Not(_) => write!(f, "{e}"),
                other => write!(f, "({other})"),
            }
        }
        match self {
            Expr::Atom(a) => write!(f, "{a}"),
            Expr::Not(e) => {
                f.write_str("NOT ")?;
                operand(e, f)
            }
            Expr::And(es) | Expr::Or(es) => {
                let op = if matches!(self, Expr::And(_)) {
                    " AND "
                } else {
                    " OR "
                };
                for (i, e) in es.iter().enumerate() {
                    if i > 0 {
                        f.write_str(op)?;
                    }
                    operand(e, f)?;
                }
                Ok(())
            }
        }
    }
}

impl Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{}> :: <{}>", self.objects, self.spec)
    }
}

impl Display for AccessPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.rules {
            writeln!(f, "{r}")?;
        }
        if !self.blacklist.is_empty() {
            writeln!(f, "---")?;
            let mut line = String::new();
            for (i, e) in self.blacklist.iter().enumerate() {
                if i > 0 {
                    line.push_str(" OR ");
                }
                write!(line, "{e}")?;
            }
            writeln!(f, "<blacklist> :: <{line}>")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG: &str = "\
<α=LinkedIn> :: <(ρ=2 AND γ=LinkedIn) OR S=CallCensor>
<χ=0.2 AND α=Facebook> :: <ρ=1>
<Δ> :: <B=mom OR B=dad>
---
<blacklist> :: <B=Alice OR B=Gary OR C=Alice>
";

    #[test]
    fn parses_example_policy() {
        let p = parse_policy(Uid(9), FIG).unwrap();
        assert_eq!(p.rules.len(), 3);
        assert_eq!(p.blacklist.len(), 3);
        assert_eq!(
            p.rules[0].spec,
            Expr::Or(vec![
                Expr::And(vec![
                    Expr::Atom(SpecAtom::Distance(2)),
                    Expr::Atom(SpecAtom::ConnectionLabel("LinkedIn".into())),
                ]),
                Expr::Atom(SpecAtom::Application("CallCensor".into())),
            ])
        );
        assert_eq!(p.to_string(), FIG);
    }

    #[test]
    fn ascii_aliases() {
        let a = parse_policy(Uid(1), "<alpha=x AND chi=0.5> :: <rho=2 AND gamma=x>").unwrap();
        let b = parse_policy(Uid(1), "<α=x AND χ=0.5> :: <ρ=2 AND γ=x>").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn numeric_principals_become_ids() {
        let p = parse_policy(Uid(1), "<Δ> :: <B=0x2a OR P=7 OR B=bob>").unwrap();
        assert_eq!(
            p.rules[0].spec,
            Expr::Or(vec![
                Expr::Atom(SpecAtom::OriginatorUser(Principal::Uid(Uid(42)))),
                Expr::Atom(SpecAtom::OriginatorPeer(PeerRef::Id(PeerId(7)))),
                Expr::Atom(SpecAtom::OriginatorUser(Principal::Name("bob".into()))),
            ])
        );
    }

    #[test]
    fn errors_carry_line_numbers() {
        for (text, line) in [
            ("<α=x> :: <ρ=1>\n<α=x> <ρ=1>", 2),
            ("<ω=1> :: <ρ=1>", 1),
            ("<α=x> :: <ρ=one>", 1),
            ("<χ=2> :: <ρ=1>", 1),
            ("<α=x> :: <ρ=1 AND>", 1),
            ("\n<blacklist> :: <B=a>", 2),
            ("---\n<α=x> :: <ρ=1>", 2),
            ("---\n<blacklist> :: <ρ=1>", 2),
            ("<α=x> :: <L=1:2>", 1),
        ] {
            match parse_policy(Uid(1), text) {
                Err(Error::ParseAt { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn not_and_nesting_print() {
        let p = parse_policy(
            Uid(1),
            "<NOT (α=a OR α=b)> :: <NOT ρ=1 AND (S=x OR (y=0.5))>",
        )
        .unwrap();
        assert_eq!(
            p.to_string(),
            "<NOT (α=a OR α=b)> :: <NOT ρ=1 AND (S=x OR y=0.5)>\n"
        );
        assert_eq!(parse_policy(Uid(1), &p.to_string()).unwrap(), p);
    }
}

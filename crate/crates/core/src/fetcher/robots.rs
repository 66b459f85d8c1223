//! robots.txt parsing with longest-match rule selection.

#[derive(Debug, Clone, PartialEq, Eq)]
struct Rule {
    allow: bool,
    pattern: String,
}

#[derive(Debug, Clone, Default)]
struct Group {
    agents: Vec<String>,
    rules: Vec<Rule>,
}

/// Rules that apply to one user-agent token.
#[derive(Debug, Clone, Default)]
pub struct Robots {
    rules: Vec<Rule>,
}

impl Robots {
    pub fn allow_all() -> Robots {
        Robots::default()
    }

    /// Picks the groups naming `agent_token` if any exist, otherwise the `*` groups.
    pub fn parse(content: &str, agent_token: &str) -> Robots {
        let mut groups: Vec<Group> = Vec::new();
        let mut current = Group::default();
        let mut last_was_agent = false;
        for raw in content.lines() {
            let line = raw.split('#').next().unwrap_or("").trim();
            let Some((key, value)) = line.split_once(':') else {
                continue;
            };
            let key = key.trim().to_ascii_lowercase();
            let value = value.trim();
            match key.as_str() {
                "user-agent" => {
                    if !last_was_agent && !current.agents.is_empty() {
                        groups.push(std::mem::take(&mut current));
                    }
                    current.agents.push(value.to_ascii_lowercase());
                    last_was_agent = true;
                }
                "allow" | "disallow" => {
                    last_was_agent = false;
                    if current.agents.is_empty() {
                        continue;
                    }
                    if value.is_empty() {
                        // "Disallow:" with no path allows everything.
                        continue;
                    }
                    current.rules.push(Rule { allow: key == "allow", pattern: value.to_string() });
                }
                _ => last_was_agent = false,
            }
        }
        if !current.agents.is_empty() {
            groups.push(current);
        }
        let token = agent_token.to_ascii_lowercase();
        let pick = |pred: &dyn Fn(&str) -> bool| -> Vec<Rule> {
            groups
                .iter()
                .filter(|g| g.agents.iter().any(|a| pred(a)))
                .flat_map(|g| g.rules.iter().cloned())
                .collect()
        };
        let own = pick(&|a| a != "*" && token.contains(a));
        let rules = if groups.iter().any(|g| g.agents.iter().any(|a| a != "*" && token.contains(a.as_str()))) {
            own
        } else {
            pick(&|a| a == "*")
        };
        Robots { rules }
    }

    /// `path` is the URL path plus optional `?query`.
    pub fn is_allowed(&self, path: &str) -> bool {
        let mut best: Option<&Rule> = None;
        for r in &self.rules {
            if !pattern_matches(&r.pattern, path) {
                continue;
            }
            best = match best {
                None => Some(r),
                Some(b) if r.pattern.len() > b.pattern.len() => Some(r),
                Some(b) if r.pattern.len() == b.pattern.len() && r.allow && !b.allow => Some(r),
                keep => keep,
            };
        }
        best.is_none_or(|r| r.allow)
    }
}

/// Prefix match with `*` wildcards and an optional trailing `$` anchor.
fn pattern_matches(pattern: &str, path: &str) -> bool {
    let (pattern, anchored) = match pattern.strip_suffix('$') {
        Some(p) => (p, true),
        None => (pattern, false),
    };
    glob(pattern.as_bytes(), path.as_bytes(), anchored)
}

fn glob(p: &[u8], s: &[u8], anchored: bool) -> bool {
    match p.split_first() {
        None => !anchored || s.is_empty(),
        Some((b'*', rest)) => (0..=s.len()).any(|i| glob(rest, &s[i..], anchored)),
        Some((c, rest)) => s.first() == Some(c) && glob(rest, &s[1..], anchored),
    }
}

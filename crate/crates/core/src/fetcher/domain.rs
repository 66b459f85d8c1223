//! Registrable-domain approximation.
//!
//! No public-suffix list is bundled; the last two host labels are taken,
//! or three when the last two form one of a handful of common second-level
//! suffixes. IP hosts are their own domain.

use url::{Host, Url};

const TWO_LEVEL_SUFFIXES: &[&str] = &[
    "co.uk", "org.uk", "ac.uk", "gov.uk", "me.uk", "ltd.uk", "plc.uk", "com.au", "net.au", "org.au", "edu.au",
    "co.nz", "org.nz", "co.jp", "ne.jp", "or.jp", "ac.jp", "com.br", "com.cn", "com.tr", "co.at", "or.at",
    "ac.at", "co.za", "com.mx", "co.in", "com.sg", "com.hk", "co.kr",
];

pub fn registrable_domain(host: &str) -> String {
    let host = host.trim_end_matches('.').to_ascii_lowercase();
    if host.parse::<std::net::IpAddr>().is_ok() || host.starts_with('[') {
        return host;
    }
    let labels: Vec<&str> = host.split('.').filter(|l| !l.is_empty()).collect();
    if labels.len() <= 2 {
        return labels.join(".");
    }
    let last_two = labels[labels.len() - 2..].join(".");
    let keep = if TWO_LEVEL_SUFFIXES.contains(&last_two.as_str()) { 3 } else { 2 };
    labels[labels.len() - keep..].join(".")
}

pub fn url_domain(url: &Url) -> Option<String> {
    match url.host()? {
        Host::Domain(d) => Some(registrable_domain(d)),
        Host::Ipv4(ip) => Some(ip.to_string()),
        Host::Ipv6(ip) => Some(format!("[{ip}]")),
    }
}

pub fn same_site(a: &Url, b: &Url) -> bool {
    matches!((url_domain(a), url_domain(b)), (Some(x), Some(y)) if x == y)
}

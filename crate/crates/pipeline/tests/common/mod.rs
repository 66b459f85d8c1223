//! Offline fixtures shared by the pipeline test targets.
#![allow(dead_code)]

use std::collections::HashMap;
use std::path::Path;

use serde_json::json;
use techradar_core::extractor::{extract_all, DataPoint, Keyword, KeywordMatcher, KeywordSource, Lexicon};
use techradar_core::fetcher::{ArchiveTransport, ManifestEntry, WebPage};
use techradar_core::{ndjson, Execution, FinalLabel, InitialLabel};
use techradar_pipeline::labeling::LabelStore;

pub const N_FIRMS: usize = 50;

/// Region id and center (lat, lon); ten firms each.
pub const REGIONS: [(&str, f64, f64); 5] = [
    ("DE212", 48.14, 11.58),
    ("DE21H", 48.05, 11.68),
    ("DE21L", 48.26, 11.42),
    ("DE217", 48.40, 11.74),
    ("DE21E", 47.98, 11.30),
];

const TYPE_CYCLE: [FinalLabel; 10] = {
    use FinalLabel::*;
    [Service, Manufacturer, Service, Retail, Information, Service, Manufacturer, Service, Information, Service]
};

#[derive(Debug, Clone)]
pub struct Firm {
    pub id: String,
    pub host: String,
    pub region: &'static str,
    pub lat: f64,
    pub lon: f64,
    /// `None` for firms whose site never mentions a keyword in content.
    pub truth: Option<FinalLabel>,
    pub employees: u64,
    pub inno: f64,
}

/// Region `r` has `10 - 2r` engaged firms, so intensities are 1.0, 0.8, .., 0.2.
pub fn firms() -> Vec<Firm> {
    (0..N_FIRMS)
        .map(|i| {
            let (r, j) = (i / 10, i % 10);
            let (region, lat, lon) = REGIONS[r];
            Firm {
                id: format!("F{i:03}"),
                host: format!("firm{i:02}.example"),
                region,
                lat: lat + (j as f64 - 4.5) * 0.004,
                lon: lon + ((j * 7) % 10) as f64 * 0.003 - 0.015,
                truth: (j < 10 - 2 * r).then(|| TYPE_CYCLE[j]),
                employees: [3, 25, 120, 800, 7000][j % 5],
                inno: ((i * 37) % 100) as f64 / 100.0,
            }
        })
        .collect()
}

pub fn registry_csv(firms: &[Firm]) -> String {
    let mut s = String::from("company_id,url,employees,incorporated,nace,region_id,lat,lon,inno_score\n");
    for (i, f) in firms.iter().enumerate() {
        let nace = ["C25.61", "M71.12", "G46.69", "J63.12", "C28.41"][i % 5];
        s.push_str(&format!(
            "{},https://{}/,{},{}-03-01,{},{},{},{},{}\n",
            f.id,
            f.host,
            f.employees,
            1990 + i % 30,
            nace,
            f.region,
            f.lat,
            f.lon,
            f.inno
        ));
    }
    // Two rows the registry must reject.
    s.push_str("BAD1,not a url,5,2001-01-01,C25,DE212,48.1,11.5,0.5\n");
    s.push_str("BAD2,https://bad2.example/,5,2001-01-01,C25,DE212,123.0,11.5,0.5\n");
    s
}

fn sentence(t: FinalLabel, variant: usize, name: &str) -> String {
    use FinalLabel::*;
    let s = match (t, variant % 2) {
        (Manufacturer, 0) => "produziert Serienbauteile aus Metall per Laserstrahlschmelzen in der eigenen Fabrik und Produktion.",
        (Manufacturer, _) => "fertigt Komponenten und Werkzeuge durch additive Fertigung in der eigenen Produktionshalle fuer den Maschinenbau.",
        (Service, 0) => "bietet 3D-Druck als Dienstleistung an: Kunden senden uns Daten, wir drucken im Auftrag und beraten.",
        (Service, _) => "ist Ihr Dienstleister fuer Lasersintern im Kundenauftrag mit Beratung, Konstruktion und Service.",
        (Retail, 0) => "verkauft im Onlineshop 3D-Drucker, Filament und Zubehoer zu guenstigen Preisen mit Versand.",
        (Retail, _) => "ist Haendler fuer 3D printer und Ersatzteile: jetzt im Shop bestellen und in den Warenkorb legen.",
        (Information, 0) => "berichtet im Blog ueber Neuigkeiten und Studien zu additive manufacturing aus der Forschung.",
        (Information, _) => "veroeffentlicht News, Artikel und ein Magazin rund um 3D printing fuer interessierte Leser.",
    };
    format!("{name} {s}")
}

fn page(title: &str, nav: &[&str], main: &[String]) -> String {
    let nav: String = nav.iter().map(|h| format!("<a href=\"{h}\">{}</a> ", h.trim_start_matches('/'))).collect();
    let main: String = main.iter().map(|p| format!("<p>{p}</p>")).collect();
    format!(
        "<!DOCTYPE html><html><head><title>{title}</title></head><body>\
         <nav>{nav}<a href=\"/leistungen\">3D-Druck</a></nav>\
         <main><h1>{title}</h1>{main}</main>\
         <footer>Impressum | {title} | SLS und FDM</footer></body></html>"
    )
}

/// Writes the crawlable archive: landing page, a services page, a contact
/// page, robots.txt; some sites add a redirect, a 404 and a page their
/// robots.txt forbids.
pub fn write_archive(dir: &Path, firms: &[Firm]) {
    let mut entries = Vec::new();
    let mut n = 0;
    let mut add = |url: String, status: u16, location: Option<String>, body: Option<String>, ctype: &str| {
        let file = body.map(|b| {
            n += 1;
            let name = format!("f{n:04}.html");
            std::fs::write(dir.join(&name), b).unwrap();
            name
        });
        entries.push(ManifestEntry {
            url,
            file,
            status,
            location,
            content_type: Some(ctype.to_string()),
            fetched_at: None,
        });
    };
    for (i, f) in firms.iter().enumerate() {
        let base = format!("https://{}", f.host);
        let name = format!("Firma {}", f.id);
        let mut nav = vec!["/", "/kontakt"];
        if i % 3 == 0 {
            nav.push("/alt");
        }
        if i % 4 == 1 {
            nav.push("/fehlt");
        }
        if i % 2 == 0 {
            nav.push("/intern");
        }
        let filler = format!("{name} wurde {} gegruendet und beschaeftigt {} Mitarbeiter.", 1990 + i % 30, f.employees);
        let (landing, services) = match f.truth {
            Some(t) => (vec![sentence(t, i, &name), filler], vec![sentence(t, i + 1, &name)]),
            None => (vec![filler], vec![format!("{name} plant Gebaeude und Anlagen fuer die Industrie.")]),
        };
        add(format!("{base}/"), 200, None, Some(page(&name, &nav, &landing)), "text/html; charset=utf-8");
        add(format!("{base}/leistungen"), 200, None, Some(page(&name, &nav, &services)), "text/html; charset=utf-8");
        add(
            format!("{base}/kontakt"),
            200,
            None,
            Some(page(&name, &nav, &[format!("Kontakt: {name}, Musterstrasse {i}")])),
            "text/html; charset=utf-8",
        );
        if i % 3 == 0 {
            add(format!("{base}/alt"), 301, Some(format!("{base}/leistungen")), None, "text/html");
        }
        if i % 4 == 1 {
            add(format!("{base}/fehlt"), 404, None, None, "text/html");
        }
        let robots = if i % 2 == 0 {
            // The forbidden page would contradict the truth label if crawled.
            let wrong = sentence(FinalLabel::Retail, 0, &name);
            add(format!("{base}/intern"), 200, None, Some(page(&name, &nav, &[wrong])), "text/html; charset=utf-8");
            "User-agent: *\nDisallow: /intern\n"
        } else {
            "User-agent: *\nDisallow:\n"
        };
        add(format!("{base}/robots.txt"), 200, None, Some(robots.to_string()), "text/plain");
    }
    ndjson::write_file(&dir.join(ArchiveTransport::MANIFEST), &entries).unwrap();
}

/// Square polygons of side 0.1 degrees around each region center.
pub fn regions_geojson() -> serde_json::Value {
    let features: Vec<_> = REGIONS
        .iter()
        .map(|(id, lat, lon)| {
            let (a, b, c, d) = (lon - 0.05, lat - 0.05, lon + 0.05, lat + 0.05);
            json!({
                "type": "Feature",
                "properties": { "region_id": id },
                "geometry": { "type": "Polygon", "coordinates": [[[a, b], [c, b], [c, d], [a, d], [a, b]]] }
            })
        })
        .collect();
    json!({ "type": "FeatureCollection", "features": features })
}

/// Registry, archive and regions under `root`; returns their paths.
pub struct Fixture {
    pub firms: Vec<Firm>,
    pub registry: std::path::PathBuf,
    pub archive: std::path::PathBuf,
    pub regions: std::path::PathBuf,
}

pub fn fixture(root: &Path) -> Fixture {
    let firms = firms();
    let archive = root.join("archive");
    std::fs::create_dir_all(&archive).unwrap();
    write_archive(&archive, &firms);
    let registry = root.join("registry.csv");
    std::fs::write(&registry, registry_csv(&firms)).unwrap();
    let regions = root.join("regions.geojson");
    std::fs::write(&regions, serde_json::to_vec(&regions_geojson()).unwrap()).unwrap();
    Fixture { firms, registry, archive, regions }
}

/// The initial label an annotator following the fixture truth would pick.
/// Alternates between the initial labels that collapse to the same final one.
pub fn truth_label(truth: FinalLabel, k: usize) -> InitialLabel {
    use InitialLabel::*;
    match (truth, k % 3) {
        (FinalLabel::Manufacturer, _) => Manufacturer,
        (FinalLabel::Service, 0) => Service,
        (FinalLabel::Service, 1) => ConsultingEducation,
        (FinalLabel::Service, _) => OwnProducts,
        (FinalLabel::Retail, _) => Retail,
        (FinalLabel::Information, _) => Information,
    }
}

/// Labels every pending task of `store` by fixture truth. Returns how many.
pub fn label_by_truth(store: &mut LabelStore, firms: &[Firm]) -> usize {
    let truth: HashMap<&str, Option<FinalLabel>> = firms.iter().map(|f| (f.id.as_str(), f.truth)).collect();
    let pending: Vec<(String, String)> = store
        .tasks()
        .iter()
        .filter(|t| t.label.is_none())
        .map(|t| (t.point_id.clone(), t.company_id.clone()))
        .collect();
    for (k, (pid, cid)) in pending.iter().enumerate() {
        let label = match truth[cid.as_str()] {
            Some(t) => truth_label(t, k),
            None => InitialLabel::Others,
        };
        store.label(pid, label, false).unwrap();
    }
    pending.len()
}

/// `n` distinct content points on one page, each matching "SLS".
pub fn synthetic_points(n: usize) -> Vec<DataPoint> {
    let lx = Lexicon::new(vec![Keyword::active("SLS", KeywordSource::Research)]).unwrap();
    let body: String = (0..n).map(|i| format!("<p>SLS Teil {i}</p>")).collect();
    let page = WebPage {
        company_id: "c".into(),
        page_url: "https://f.example/".parse().unwrap(),
        fetched_at: chrono::DateTime::UNIX_EPOCH,
        status: 200,
        body: format!("<html><body>{body}</body></html>"),
        depth: 0,
    };
    extract_all(&[page], &KeywordMatcher::new(&lx), Execution::Sequential)
}

/// Writes `points` as the `points.ndjson` artifact of `data_dir`.
pub fn write_points(data_dir: &Path, points: &[DataPoint]) {
    std::fs::create_dir_all(data_dir).unwrap();
    ndjson::write_file(&data_dir.join("points.ndjson"), points).unwrap();
}

pub fn annotators(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("ann{i}")).collect()
}

/// Small ensemble, no politeness wait, hotspots from 5 firms.
pub const FAST_CONFIG: &str = r#"
[crawl]
per_host_delay_ms = 1

[ensemble]
master_seed = 7

[ensemble.train]
epochs = 200
batch_size = 16

[ensemble.search]
hidden = [0, 16]
learning_rates = [0.05]
trials = 2
epochs = 3

[geo]
min_total = 5
"#;

pub fn fast_config() -> techradar_pipeline::Config {
    techradar_pipeline::Config::parse(FAST_CONFIG).unwrap()
}

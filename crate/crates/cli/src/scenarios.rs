//! Scenario and detector selection.

use std::path::{Path, PathBuf};

use lanedrive::detectors::DetectorSpec;
use lanedrive::fixtures::{road_scenario, stability_scenario, straight_roads, suite_detectors, suite_roads, RoadSpec};
use lanedrive::scenario::{load_scenario, Scenario};

use crate::CliError;

fn all_fixture_specs() -> Vec<RoadSpec> {
    let mut v = straight_roads();
    for s in suite_roads() {
        if !v.iter().any(|x| x.id == s.id) {
            v.push(s);
        }
    }
    v
}

/// Checks every selector up front so a bad path fails before any work.
pub fn check_selectors(selectors: &[String]) -> Result<(), CliError> {
    if selectors.is_empty() {
        return Err(CliError::Usage("scenarios: need at least one".into()));
    }
    for s in selectors {
        if let Some(set) = s.strip_prefix("fixtures:") {
            if !matches!(set, "straight" | "suite" | "stability" | "all") {
                return Err(CliError::Usage(format!("unknown fixture set {set:?}")));
            }
        } else if let Some(id) = s.strip_prefix("fixture:") {
            if id != "stability" && !all_fixture_specs().iter().any(|f| f.id == id) {
                return Err(CliError::Usage(format!("unknown fixture {id:?}")));
            }
        } else if !manifest_path(Path::new(s)).exists() {
            return Err(CliError::Usage(format!("scenario path not found: {}", manifest_path(Path::new(s)).display())));
        }
    }
    Ok(())
}

fn manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join("scenario.json")
    } else {
        p.to_path_buf()
    }
}

/// Loads the scenarios named by `selectors`, in order.
pub fn load_all(selectors: &[String]) -> Result<Vec<Scenario>, CliError> {
    check_selectors(selectors)?;
    let mut out = Vec::new();
    for s in selectors {
        if let Some(set) = s.strip_prefix("fixtures:") {
            let specs = match set {
                "straight" => straight_roads(),
                "suite" => suite_roads(),
                "all" => all_fixture_specs(),
                _ => {
                    out.push(stability_scenario());
                    continue;
                }
            };
            out.extend(specs.iter().map(road_scenario));
        } else if let Some(id) = s.strip_prefix("fixture:") {
            if id == "stability" {
                out.push(stability_scenario());
            } else {
                let spec = all_fixture_specs().into_iter().find(|f| f.id == id).expect("checked");
                out.push(road_scenario(&spec));
            }
        } else {
            let p = manifest_path(Path::new(s));
            out.push(load_scenario(&p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?);
        }
    }
    Ok(out)
}

pub fn parse_detectors(specs: &[String]) -> Result<Vec<DetectorSpec>, CliError> {
    let mut out = Vec::new();
    for s in specs {
        if s == "suite" {
            out.extend(suite_detectors());
        } else {
            out.push(s.parse().map_err(|e| CliError::Usage(format!("detectors: {e}")))?);
        }
    }
    Ok(out)
}

/// File-name-safe form of a label.
pub fn slug(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

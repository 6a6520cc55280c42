use std::fs;
use std::path::Path;

use serde_json::{json, Value};

use super::commands::finished_runs;
use super::stage::Stage;
use super::{fmt6, pct_improvement, RunConfig};
use crate::error::{Error, Result};
use crate::finetune::EpochReport;

fn read_json(p: &Path) -> Result<Value> {
    Ok(serde_json::from_slice(&fs::read(p).map_err(|e| Error::io(p, e))?)?)
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt6).unwrap_or_default()
}

fn num(v: &Value, key: &str) -> Result<f64> {
    v[key].as_f64().ok_or_else(|| Error::Format(format!("missing number '{key}'")))
}

/// Consolidates the outputs of the other commands under `<out>/report/`.
/// Wall-clock times are left out so reruns produce identical tables.
pub fn cmd_report(cfg: &RunConfig) -> Result<Value> {
    let runs = finished_runs(cfg)?;
    if runs.is_empty() {
        return Err(Error::Data(format!("no runs found under {}", cfg.out.join("runs").display())));
    }
    let stage = Stage::new(cfg.out.join("report"))?;

    let mut curves = String::from("subject,roi,epoch,train_loss,val_rho,test_rho,degenerate_volumes\n");
    let mut best = Vec::new();
    for (subject, roi, dir) in &runs {
        let p = dir.join("epochs.jsonl");
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let r: EpochReport = serde_json::from_str(line)?;
            curves.push_str(&format!(
                "{subject},{roi},{},{},{},{},{}\n",
                r.epoch,
                opt(r.train_loss),
                opt(r.val_rho),
                opt(r.test_rho),
                r.degenerate_volumes
            ));
        }
        let b = read_json(&dir.join("best.json"))?;
        best.push(json!({
            "subject": subject,
            "roi": roi,
            "best_epoch": b["best_epoch"],
            "test_rho": num(&b, "test_rho")?,
            "baseline_test_rho": num(&b, "baseline_test_rho")?,
            "pct_improvement": pct_improvement(num(&b, "test_rho")?, num(&b, "baseline_test_rho")?),
        }));
    }
    stage.write("curves.csv", &curves)?;

    let eval = cfg.out.join("eval").join("eval.csv");
    let roi_source = if eval.exists() {
        stage.write("roi_improvement.csv", fs::read(&eval).map_err(|e| Error::io(&eval, e))?)?;
        "eval"
    } else {
        let mut s = String::from("subject,train_roi,scope,rho_pretrained,rho_model,pct_improvement\n");
        for b in &best {
            let (pre, post) = (num(b, "baseline_test_rho")?, num(b, "test_rho")?);
            s.push_str(&format!(
                "{},{},all,{},{},{}\n",
                b["subject"].as_str().unwrap_or_default(),
                b["roi"].as_str().unwrap_or_default(),
                fmt6(pre),
                fmt6(post),
                fmt6(pct_improvement(post, pre))
            ));
        }
        stage.write("roi_improvement.csv", s)?;
        "best"
    };

    let mut transfer = String::from("train_roi,train_subject,test_subject,scope,rho_pretrained,rho_model,pct_improvement\n");
    let mut transfer_rois = Vec::new();
    let troot = cfg.out.join("transfer");
    if troot.exists() {
        let mut dirs: Vec<_> = fs::read_dir(&troot).map_err(|e| Error::io(&troot, e))?.flatten().map(|e| e.path()).collect();
        dirs.sort();
        for d in dirs {
            let (Some(roi), true) = (d.file_name().and_then(|n| n.to_str()), d.join("matrix.csv").exists()) else {
                continue;
            };
            if roi.starts_with('.') {
                continue;
            }
            let p = d.join("matrix.csv");
            let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            for line in text.lines().skip(1) {
                transfer.push_str(&format!("{roi},{line}\n"));
            }
            transfer_rois.push(roi.to_string());
        }
    }
    if transfer_rois.is_empty() {
        // diagonal only, from the runs themselves
        for b in &best {
            let (pre, post) = (num(b, "baseline_test_rho")?, num(b, "test_rho")?);
            let s = b["subject"].as_str().unwrap_or_default();
            transfer.push_str(&format!(
                "{},{s},{s},all,{},{},{}\n",
                b["roi"].as_str().unwrap_or_default(),
                fmt6(pre),
                fmt6(post),
                fmt6(pct_improvement(post, pre))
            ));
        }
    }
    stage.write("transfer.csv", &transfer)?;

    let probes = cfg.out.join("probes").join("probes.csv");
    let has_probes = probes.exists();
    if has_probes {
        stage.write("probes.csv", fs::read(&probes).map_err(|e| Error::io(&probes, e))?)?;
    }

    let summary = json!({
        "command": "report",
        "runs": best,
        "roi_improvement_source": roi_source,
        "transfer_rois": transfer_rois,
        "probes": has_probes,
    });
    stage.write("summary.json", serde_json::to_vec_pretty(&summary)?)?;
    stage.commit()?;
    Ok(summary)
}

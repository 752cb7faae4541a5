#![allow(dead_code)]

use std::io::Write;
use std::sync::{Mutex, MutexGuard};

use lsnet::gridcodec::{CellBox, LineSegment};

static SERIAL: Mutex<()> = Mutex::new(());

/// Runs acceptance tests one at a time so timed criteria get the whole CPU.
pub fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

/// Prints the one-line verdict of an acceptance criterion.
pub fn report(criterion: usize, pass: bool, detail: &str) {
    report_verdict(criterion, if pass { "PASS" } else { "FAIL" }, detail);
}

/// Writes to the stdout handle directly, which the test harness does not
/// capture, so verdicts show up for passing tests too.
pub fn report_verdict(criterion: usize, verdict: &str, detail: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{verdict} criterion {criterion}: {detail}");
    let _ = out.flush();
}

/// Clips by splitting the segment at every box-edge crossing and keeping the
/// sub-intervals whose midpoints lie in the box.
pub fn clip_oracle(seg: &LineSegment, bx: &CellBox) -> Option<LineSegment> {
    let (dx, dy) = (seg.x2 - seg.x1, seg.y2 - seg.y1);
    let mut ts = vec![0.0, 1.0];
    for (p0, d, edge) in [
        (seg.x1, dx, bx.x0),
        (seg.x1, dx, bx.x1()),
        (seg.y1, dy, bx.y0),
        (seg.y1, dy, bx.y1()),
    ] {
        if d != 0.0 {
            let t = (edge - p0) / d;
            if (0.0..=1.0).contains(&t) {
                ts.push(t);
            }
        }
    }
    ts.sort_by(f64::total_cmp);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for w in ts.windows(2) {
        if w[1] <= w[0] {
            continue;
        }
        let (x, y) = seg.point_at(0.5 * (w[0] + w[1]));
        if bx.contains(x, y) {
            lo = lo.min(w[0]);
            hi = hi.max(w[1]);
        }
    }
    if lo >= hi {
        return None;
    }
    let (ax, ay) = seg.point_at(lo);
    let (bx_, by) = seg.point_at(hi);
    Some(LineSegment::new(ax, ay, bx_, by))
}

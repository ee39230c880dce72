use ndarray::array;

use multitreat::balance::balance_report;
use multitreat::{Dataset, ScoreMatrix};

#[test]
fn balance_table_golden() {
    let x = array![[0.0, 5.0], [1.0, 5.0], [2.0, 5.0], [1.0, 5.0], [2.0, 5.0], [3.0, 5.0]];
    let d = Dataset::new(
        x,
        vec![0, 0, 0, 1, 1, 1],
        vec![0.0; 6],
        vec!["A".into(), "B".into()],
        false,
        vec!["ctl".into(), "trt".into()],
    )
    .unwrap();
    let p = [0.75, 0.5, 0.25, 0.5, 0.25, 0.0];
    let s = ScoreMatrix::new(ndarray::Array2::from_shape_fn((6, 2), |(i, w)| if w == 0 { p[i] } else { 1.0 - p[i] }))
        .unwrap();
    let report = balance_report(&d, &s, 4).unwrap();
    let mut out = Vec::new();
    report.write_csv(&mut out).unwrap();
    let expected = "\
metric,level,covariate,value
nd_cov,1,A,-1.0
nd_cov,1,B,0.0
nd_cov,2,A,1.0
nd_cov,2,B,0.0
nd_gps,1,,1.0
nd_gps,2,,1.0
";
    assert_eq!(String::from_utf8(out).unwrap(), expected);
    assert_eq!(report.max_abs_gps_nd(), 1.0);
    for h in &report.histograms {
        assert_eq!(h.edges.len(), 5);
        assert_eq!(h.own_arm.iter().sum::<usize>(), 3);
        assert_eq!(h.other_arms.iter().sum::<usize>(), 3);
    }
}

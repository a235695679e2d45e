//! Synthetic consumer-loan data with the shape of a public lending dataset:
//! twenty numeric loan and bureau attributes plus a `loan_status` label.
//!
//! Repayment outcome is drawn from a logistic risk score over the
//! origination attributes; payment-history columns (`total_pymnt`,
//! `recoveries`, ...) are then generated conditionally on the outcome, as
//! they are in real servicing data.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};

use crate::data::{load_csv_str, DataConfig, Dataset, FeatureSchema, LoadOptions};
use crate::error::Result;
use crate::io::fmt_f64;

pub const TARGET: &str = "loan_status";
pub const PAID: &str = "Fully Paid";
pub const CHARGED_OFF: &str = "Charged Off";
pub const CURRENT: &str = "Current";

/// (column name, business description)
pub const FEATURES: [(&str, &str); 20] = [
    ("loan_amnt", "The listed amount of the loan applied for by the borrower"),
    (
        "funded_amnt",
        "The total amount committed to that loan at that point in time",
    ),
    ("term", "The number of payments on the loan in months"),
    ("int_rate", "Interest rate on the loan"),
    (
        "installment",
        "The monthly payment owed by the borrower if the loan originates",
    ),
    ("annual_inc", "The self-reported annual income provided by the borrower"),
    ("dti", "Monthly debt payments divided by monthly income"),
    ("revol_bal", "Total credit revolving balance"),
    ("revol_util", "Revolving line utilization rate"),
    (
        "total_acc",
        "The total number of credit lines in the borrower's credit file",
    ),
    ("num_rev_accts", "Number of revolving accounts"),
    (
        "num_rev_tl_bal_gt_0",
        "Number of revolving trades with positive balance",
    ),
    ("bc_open_to_buy", "Total open to buy on revolving bankcards"),
    ("mo_sin_rcnt_tl", "Months since most recent account opened"),
    ("all_util", "Balance to credit limit on all trades"),
    ("total_pymnt", "Payments received to date for total amount funded"),
    ("last_pymnt_amnt", "Last total payment amount received"),
    ("recoveries", "Post charge off gross recovery"),
    ("collection_recovery_fee", "Recovery fee under collection"),
    ("tot_cur_bal", "Total current balance of all accounts"),
];

pub fn feature_names() -> Vec<String> {
    FEATURES.iter().map(|(n, _)| n.to_string()).collect()
}

/// Schema mapping "Fully Paid" to 1 and "Charged Off" to 0; "Current" loans
/// are left unmapped and dropped on load.
pub fn lending_config() -> DataConfig {
    let schema = FeatureSchema::new(
        feature_names(),
        TARGET,
        BTreeMap::from([(PAID.to_string(), 1), (CHARGED_OFF.to_string(), 0)]),
    )
    .expect("static schema is valid");
    DataConfig {
        schema,
        options: LoadOptions::default(),
    }
}

/// `feature_name,description` CSV for the generated columns.
pub fn dictionary_csv() -> String {
    let mut out = String::from("feature_name,description\n");
    for (name, desc) in FEATURES {
        out.push_str(&format!("{name},\"{desc}\"\n"));
    }
    out
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// CSV text with `n_rows` loans; about 5% carry the unmapped "Current" status.
pub fn lending_csv(n_rows: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let amount: LogNormal<f64> = LogNormal::new(9.3, 0.55).expect("valid");
    let income: LogNormal<f64> = LogNormal::new(11.0, 0.45).expect("valid");
    let balance: LogNormal<f64> = LogNormal::new(9.2, 0.9).expect("valid");
    let open_to_buy: LogNormal<f64> = LogNormal::new(8.2, 1.2).expect("valid");
    let cur_bal: LogNormal<f64> = LogNormal::new(11.0, 1.0).expect("valid");
    let noise: Normal<f64> = Normal::new(0.0, 1.0).expect("valid");

    let mut out = String::new();
    let header: Vec<&str> = FEATURES.iter().map(|(n, _)| *n).chain([TARGET]).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for _ in 0..n_rows {
        let loan_amnt = (amount.sample(&mut rng) / 25.0).round().clamp(20.0, 1600.0) * 25.0;
        let funded_amnt = if rng.gen_bool(0.1) {
            loan_amnt - 25.0 * rng.gen_range(1..20) as f64
        } else {
            loan_amnt
        }
        .max(500.0);
        let term = if rng.gen_bool(0.3) { 60.0 } else { 36.0 };
        let int_rate =
            round2((12.5 + 4.5 * noise.sample(&mut rng) + if term > 36.0 { 3.0 } else { 0.0 }).clamp(5.3, 30.9));
        let r = int_rate / 1200.0;
        let installment = round2(funded_amnt * r / (1.0 - (1.0 + r).powf(-term)));
        let annual_inc = (income.sample(&mut rng) / 100.0).round() * 100.0;
        let dti = round2((18.0 + 8.0 * noise.sample(&mut rng)).clamp(0.0, 45.0));
        let revol_bal = balance.sample(&mut rng).round();
        let revol_util = round2((52.0 + 24.0 * noise.sample(&mut rng)).clamp(0.0, 120.0));
        let total_acc = rng.gen_range(4..60) as f64;
        let num_rev_accts = (total_acc * rng.gen_range(0.3..0.8)).round();
        let num_rev_tl_bal_gt_0 = (num_rev_accts * rng.gen_range(0.2..0.9)).round();
        let bc_open_to_buy = open_to_buy.sample(&mut rng).round();
        let mo_sin_rcnt_tl = rng.gen_range(0..48) as f64;
        let all_util = round2((60.0 + 20.0 * noise.sample(&mut rng)).clamp(0.0, 150.0));
        let tot_cur_bal = cur_bal.sample(&mut rng).round();

        let risk = -1.9 + 0.16 * (int_rate - 12.5) + 0.035 * (dti - 18.0) + if term > 36.0 { 0.45 } else { 0.0 }
            - 0.5 * (annual_inc / 65_000.0).ln()
            + 0.008 * (revol_util - 52.0)
            - 0.02 * (mo_sin_rcnt_tl - 12.0).min(0.0);
        let p_default = 1.0 / (1.0 + (-risk).exp());
        let status = if rng.gen_bool(0.05) {
            CURRENT
        } else if rng.gen_bool(p_default) {
            CHARGED_OFF
        } else {
            PAID
        };

        let scheduled = installment * term;
        let (total_pymnt, last_pymnt_amnt, recoveries, fee) = match status {
            CHARGED_OFF => {
                let paid_months = rng.gen_range(1.0..term * 0.7);
                let recovered = if rng.gen_bool(0.8) {
                    round2(funded_amnt * rng.gen_range(0.01..0.2))
                } else {
                    0.0
                };
                let fee = if recovered > 0.0 && rng.gen_bool(0.85) {
                    round2(recovered * rng.gen_range(0.005..0.18))
                } else {
                    0.0
                };
                (
                    round2(installment * paid_months + recovered),
                    round2(installment * rng.gen_range(0.0..1.0)),
                    recovered,
                    fee,
                )
            }
            PAID => {
                let prepaid = rng.gen_bool(0.35);
                let total = if prepaid {
                    round2(funded_amnt + (scheduled - funded_amnt) * rng.gen_range(0.2..0.9))
                } else {
                    round2(scheduled)
                };
                let last = if prepaid {
                    round2(funded_amnt * rng.gen_range(0.1..0.9))
                } else {
                    installment
                };
                (total, last, 0.0, 0.0)
            }
            _ => {
                let months = rng.gen_range(1.0..term);
                (round2(installment * months), installment, 0.0, 0.0)
            }
        };

        let row = [
            loan_amnt,
            funded_amnt,
            term,
            int_rate,
            installment,
            annual_inc,
            dti,
            revol_bal,
            revol_util,
            total_acc,
            num_rev_accts,
            num_rev_tl_bal_gt_0,
            bc_open_to_buy,
            mo_sin_rcnt_tl,
            all_util,
            total_pymnt,
            last_pymnt_amnt,
            recoveries,
            fee,
            tot_cur_bal,
        ];
        let cells: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        out.push_str(&cells.join(","));
        out.push(',');
        out.push_str(status);
        out.push('\n');
    }
    out
}

/// Generated loans loaded through the regular CSV path ("Current" rows
/// dropped).
pub fn lending_dataset(n_rows: usize, seed: u64) -> Result<Dataset> {
    let cfg = lending_config();
    let (data, _) = load_csv_str(&lending_csv(n_rows, seed), "<synthetic>", &cfg.schema, cfg.options)?;
    Ok(data)
}

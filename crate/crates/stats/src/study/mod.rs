//! Rater-study analysis: questionnaire planning, score adjustment,
//! reliability, method comparison, sampling adequacy and the general factor.

mod adjust;
mod comparison;
mod factor;
pub mod fixture;
mod plan;
mod reliability;
mod report;
mod table;

pub use adjust::{z_adjust, ZAdjustment};
pub use comparison::{
    method_comparison, order_effect_test, CriterionComparison, MethodComparison, MethodSummary, MethodTest,
    OrderEffect, ScoreBlock,
};
pub use factor::{correlation_matrix, criterion_matrix, general_factor, kmo, CriterionMatrix, GeneralFactor};
pub use plan::{make_questionnaire_plan, ItemOrder, QuestionnairePlan, VariantPlan};
pub use reliability::{interobserver_rho, RhoResult};
pub use report::{study_report, StudyReport};
pub use table::{Criterion, Response, ResponseTable, SCORE_MAX, SCORE_MIN};

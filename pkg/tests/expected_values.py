"""Frozen numeric targets. Generated by tools/make_expected_values.py."""

LAMBDA_M1_D1 = 39.47841760435743
LAMBDA_M2_D1 = 157.91367041742973
SEMIGROUP_M1_T01 = 0.019296302911016777
COV_M1_T05_T05 = 0.012665147955292222
COV_M1_T025_T025 = 0.012665147921409303
COV_M1_T025_T05 = 6.550818042378798e-07
COV_M2_T05_T05 = 0.0031662869888230555
COV_M2_T025_T025 = 0.0031662869888230555
COV_M2_T025_T05 = 2.2661641060798457e-20
COV_M3_T05_T05 = 0.0014072386616991357
COV_M3_T025_T025 = 0.0014072386616991357
COV_M3_T025_T05 = 3.728508699940947e-42
OU_STATIONARY_VAR_M1 = 0.012665147955292222
INT_COV_M1_T05_S03 = 0.00017623173528016399
INT_COV_M0_T05_S03 = 0.018
ENTROPY_FULL_N4_RHO05 = 2.772588722239781
ENTROPY_FULL_N8_RHO05 = 5.545177444479562
ENTROPY_NU06_N8_RHO05 = 0.1610841084055109
FIELD_VAR0_N64 = 0.12258904250622635
FIELD_VAR0_N256 = 0.10616522503600238
A_N_SQRTLOG_64 = 2.039333980337618
A_N_SQRTLOG_256 = 2.3548200450309493
TILDE_PRIME_EXAMPLE = 1.8
CENTERED_COEFFS_PAIR_RHO05 = {'empty': 0.25, 'site0': 0.5, 'site1': 0.5, 'pair': 1.0}
PI_FULL_EXAMPLE = -0.75
PI_ONE_EXAMPLE = -0.5
PI_TWO_EXAMPLE = -0.25
GRADIENT_H_ADDITIVE = {(0,): 1.0, (-1, 1): -0.5, (-1, 0): 0.5, (0, 1): 0.5}
FLOW_D1_L2_FLUX = [0.75, 0.25]
FLOW_D1_L2_ENERGY = 0.625
CONV_D1_L2_WEIGHTS = [0.25, 0.5, 0.25]
ELL_RAW_D1_N100_A4 = 50.0
ELL_D3_N100_A1 = 21.544346900318835
VOTER_RATE_SUM_N64_RHO05 = 64.0
MARTINGALE_TARGET_T05 = 0.5

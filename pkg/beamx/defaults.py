default_seed = 10

# network
default_k_users = 4
default_n_antennas = 8
default_power_budget = 10.0      # P, linear scale
default_sigma2 = 1.0             # noise power, linear scale
default_circuit_power = 1.0      # Pc for energy efficiency
default_train_count = 2000
default_test_count = 500

# model
default_hidden_dim = 64
default_depth = 3
default_heads = 4
default_readout_hidden = 64
default_leaky_alpha = 0.2
default_mlp_hidden = 256
default_lambda_init = 0.1

# training
default_lr = 1e-3
default_betas = (0.9, 0.999)
default_adam_eps = 1e-8
default_batch_size = 64
default_epochs = 200
default_patience = 20
default_val_fraction = 0.2
default_rho_init = 1.0
default_rho_growth = 2.0
default_rho_every = 20
default_rho_cap = 1e4
default_eta_dual = 0.05

# baselines
default_wmmse_maxiter = 500
default_wmmse_tol = 1e-7
default_bisection_steps = 64
default_pga_restarts = 8
default_pga_steps = 500
default_pga_lr = 0.05

# evaluation
default_feasibility_tol = 1e-6
default_stability_n = 10.0
default_stability_curve = (1.0, 5.0, 10.0, 20.0, 50.0)
default_convergence_rel = 0.01
default_timing_repetitions = 3
default_scalability_users = (7, 8, 9)
default_scalability_powers = (1.0, 10.0, 100.0)
default_scalability_antennas = 16

default_log_threshold = 1e-10

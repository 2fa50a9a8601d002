"""NMSE vs SNR for several maximum Doppler frequencies at n_t = 192."""
from _sweep import main

if __name__ == "__main__":
    main("fig2", "f_d", __doc__)

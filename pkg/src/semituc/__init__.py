"""Store-and-forward signal control workbench.

Subpackage map:

* ``network``    -- directed link/junction model, alternating one-way grids,
  circuit detection.
* ``dynamics``   -- per-cycle store-and-forward state update with contention
  (yellow) windows and a friction coefficient, control matrices.
* ``lqr``        -- discounted LQ gain synthesis (Riccati), value-iteration
  oracle, Webster cycle formula.
* ``controller`` -- feedback law, feasibility projection, stage schedules.
* ``microsim``   -- microscopic fixed-step simulator of the same networks.
* ``config``     -- scenario files (network, demand, weights, run options).
* ``runner``     -- cycle loop wiring controller and simulator, CSV output.
* ``plots``      -- comparison and per-circuit figures.
* ``cli``        -- command line entry points.
"""

__version__ = "0.1.0"

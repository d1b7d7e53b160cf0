# Self-trapped states, Madelung fields and free evolution

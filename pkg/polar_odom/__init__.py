# polar_odom

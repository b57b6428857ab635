# Apps package